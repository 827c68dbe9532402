#include <array>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "rehab/loggp.hpp"

namespace rehab::loggp {

namespace {

constexpr std::array<char, 8> kMagic = {'R', 'H', 'L', 'O', 'G', 'G', 'P', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kRoutingTag = 0;
constexpr std::uint8_t kLeafTag = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("snapshot truncated");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError("snapshot truncated");
  return s;
}

void put_vector(std::ostream& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(out, v[i]);
}

Eigen::VectorXd get_vector(std::istream& in, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = get<double>(in);
  return v;
}

}  // namespace

void write_tree(std::ostream& out, const LogGpTree& tree) {
  const auto& s = tree.settings_;
  const int rho = tree.input_dim_;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rho));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.max_leaf_size));
  put<double>(out, s.overlap_ratio);
  put<std::uint8_t>(out, s.adapt_hyper ? 1 : 0);
  put<double>(out, s.rprop.initial_step);
  put<double>(out, s.rprop.increase);
  put<double>(out, s.rprop.decrease);
  put<double>(out, s.rprop.min_step);
  put<double>(out, s.rprop.max_step);
  put<double>(out, s.rprop.max_log_deviation);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.adapt_mask.size()));
  for (bool b : s.adapt_mask) put<std::uint8_t>(out, b ? 1 : 0);
  put_vector(out, s.initial_hyper.to_vector());
  put<std::uint64_t>(out, s.seed);

  const auto& st = tree.stats_;
  put<std::uint64_t>(out, st.total_count);
  put<std::uint64_t>(out, st.dropped_samples);
  put<std::uint64_t>(out, st.skipped_updates);
  put<std::uint64_t>(out, st.evictions);
  put<std::uint64_t>(out, st.splits);

  std::ostringstream rng;
  rng << tree.rng_;
  put_string(out, rng.str());

  put<std::uint32_t>(out, static_cast<std::uint32_t>(tree.nodes_.size()));
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const auto& n = tree.nodes_[static_cast<std::size_t>(id)];
    if (!n.is_leaf()) {
      put<std::uint8_t>(out, kRoutingTag);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(n.route.split_dim));
      put<double>(out, n.route.split_value);
      put<double>(out, n.route.overlap);
      stack.push_back(n.right);
      stack.push_back(n.left);
      continue;
    }
    const Leaf& leaf = tree.leaves_[static_cast<std::size_t>(n.leaf)];
    put<std::uint8_t>(out, kLeafTag);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(leaf.model.size()));
    put_vector(out, leaf.hyper.theta_tilde);
    put_vector(out, leaf.hyper.step_widths);
    put_vector(out, leaf.hyper.lower);
    put_vector(out, leaf.hyper.upper);
    for (Eigen::Index i = 0; i < leaf.hyper.prev_signs.size(); ++i)
      put<std::int8_t>(out, static_cast<std::int8_t>(leaf.hyper.prev_signs[i]));
    const auto inputs = leaf.model.inputs();
    for (Eigen::Index c = 0; c < inputs.cols(); ++c) put_vector(out, inputs.col(c));
    put_vector(out, leaf.model.targets());
  }
  if (!out) throw DataError("failed writing tree snapshot");
}

LogGpTree read_tree(std::istream& in) {
  const int rho = static_cast<int>(get<std::uint32_t>(in));
  if (rho <= 0 || rho > 4096) throw DataError("snapshot has an invalid input dimension");
  const int params = rho + 2;
  TreeSettings s;
  s.max_leaf_size = static_cast<int>(get<std::uint32_t>(in));
  s.overlap_ratio = get<double>(in);
  s.adapt_hyper = get<std::uint8_t>(in) != 0;
  s.rprop.initial_step = get<double>(in);
  s.rprop.increase = get<double>(in);
  s.rprop.decrease = get<double>(in);
  s.rprop.min_step = get<double>(in);
  s.rprop.max_step = get<double>(in);
  s.rprop.max_log_deviation = get<double>(in);
  const auto mask_len = get<std::uint32_t>(in);
  if (mask_len != 0 && mask_len != static_cast<std::uint32_t>(params))
    throw DataError("snapshot adaptation mask has the wrong length");
  for (std::uint32_t i = 0; i < mask_len; ++i) s.adapt_mask.push_back(get<std::uint8_t>(in) != 0);
  s.initial_hyper = gp::Hyperparameters::from_vector(get_vector(in, params));
  s.seed = get<std::uint64_t>(in);

  LogGpTree tree(rho, s);
  tree.stats_.total_count = get<std::uint64_t>(in);
  tree.stats_.dropped_samples = get<std::uint64_t>(in);
  tree.stats_.skipped_updates = get<std::uint64_t>(in);
  tree.stats_.evictions = get<std::uint64_t>(in);
  tree.stats_.splits = get<std::uint64_t>(in);

  std::istringstream rng(get_string(in));
  rng >> tree.rng_;
  if (!rng) throw DataError("snapshot has a corrupt generator state");

  const auto node_count = get<std::uint32_t>(in);
  if (node_count == 0) throw DataError("snapshot has no nodes");
  tree.nodes_.clear();
  tree.leaves_.clear();

  // Preorder rebuild: each entry is the slot of a node whose record is next.
  tree.nodes_.resize(1);
  std::vector<int> pending{0};
  while (!pending.empty()) {
    if (tree.nodes_.size() > node_count) throw DataError("snapshot node count mismatch");
    const int id = pending.back();
    pending.pop_back();
    const auto tag = get<std::uint8_t>(in);
    if (tag == kRoutingTag) {
      RoutingNode r;
      r.split_dim = static_cast<int>(get<std::uint32_t>(in));
      r.split_value = get<double>(in);
      r.overlap = get<double>(in);
      if (r.split_dim >= rho || !(r.overlap >= 0.0)) throw DataError("snapshot has a bad routing node");
      const int left = static_cast<int>(tree.nodes_.size());
      tree.nodes_.resize(tree.nodes_.size() + 2);
      auto& n = tree.nodes_[static_cast<std::size_t>(id)];
      n.route = r;
      n.left = left;
      n.right = left + 1;
      n.leaf = -1;
      pending.push_back(left + 1);
      pending.push_back(left);
    } else if (tag == kLeafTag) {
      const auto n = static_cast<int>(get<std::uint32_t>(in));
      HyperState h;
      h.theta_tilde = get_vector(in, params);
      h.step_widths = get_vector(in, params);
      h.lower = get_vector(in, params);
      h.upper = get_vector(in, params);
      h.prev_signs.resize(params);
      for (int i = 0; i < params; ++i) h.prev_signs[i] = get<std::int8_t>(in);
      Eigen::MatrixXd inputs(rho, n);
      for (int c = 0; c < n; ++c) inputs.col(c) = get_vector(in, rho);
      Eigen::VectorXd targets = get_vector(in, n);
      Leaf leaf{gp::FactorizedModel(gp::Dataset(std::move(inputs), std::move(targets)), h.hyper()),
                std::move(h)};
      leaf.model.reserve(s.max_leaf_size + 1);
      tree.nodes_[static_cast<std::size_t>(id)].leaf = static_cast<int>(tree.leaves_.size());
      tree.leaves_.push_back(std::move(leaf));
    } else {
      throw DataError("snapshot has an unknown node tag");
    }
  }
  if (tree.nodes_.size() != node_count) throw DataError("snapshot node count mismatch");
  return tree;
}

void write_snapshot(std::ostream& out, const VectorPredictor& predictor) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(predictor.input_dim()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(predictor.output_dim()));
  put<std::uint32_t>(out, predictor.output_dim() > 0
                              ? static_cast<std::uint32_t>(predictor.tree(0).settings().max_leaf_size)
                              : 0u);
  for (int i = 0; i < predictor.output_dim(); ++i) write_tree(out, predictor.tree(i));
  if (!out) throw DataError("failed writing snapshot");
}

VectorPredictor read_snapshot(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a LoG-GP snapshot");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw DataError("unsupported snapshot version " + std::to_string(version));
  const auto rho = get<std::uint32_t>(in);
  const auto d = get<std::uint32_t>(in);
  const auto leaf_size = get<std::uint32_t>(in);
  if (d == 0 || d > 1024) throw DataError("snapshot has an invalid output dimension");
  std::vector<LogGpTree> trees;
  trees.reserve(d);
  for (std::uint32_t i = 0; i < d; ++i) {
    trees.push_back(read_tree(in));
    if (static_cast<std::uint32_t>(trees.back().input_dim()) != rho ||
        static_cast<std::uint32_t>(trees.back().settings().max_leaf_size) != leaf_size)
      throw DataError("snapshot tree disagrees with the header");
  }
  return VectorPredictor(std::move(trees));
}

}  // namespace rehab::loggp
