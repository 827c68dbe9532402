#include "rehab/loggp.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>
#include <utility>

namespace rehab::loggp {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) { return v.array().isFinite().all(); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
}

HyperState HyperState::from_hyper(const gp::Hyperparameters& hp, const RpropSettings& rprop) {
  hp.validate();
  HyperState s;
  const int count = hp.parameter_count();
  s.theta_tilde = hp.to_vector().array().log().matrix();
  s.step_widths = Eigen::VectorXd::Constant(count, rprop.initial_step);
  s.prev_signs = Eigen::VectorXi::Zero(count);
  const double inf = std::numeric_limits<double>::infinity();
  const double span = rprop.max_log_deviation > 0.0 ? rprop.max_log_deviation : inf;
  s.lower = (s.theta_tilde.array() - span).matrix();
  s.upper = (s.theta_tilde.array() + span).matrix();
  return s;
}

gp::Hyperparameters HyperState::hyper() const {
  return gp::Hyperparameters::from_vector(theta_tilde.array().exp().matrix());
}

StepResult hyper_update_step(gp::FactorizedModel& model, HyperState& state,
                             const RpropSettings& rprop, const std::vector<bool>& mask) {
  if (model.empty()) return StepResult::Disabled;
  const auto count = state.theta_tilde.size();
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != count)
    throw UsageError("adaptation mask has the wrong length");

  // d/d(log theta) = theta * d/d(theta)
  const Eigen::VectorXd grad =
      model.log_likelihood_gradient().cwiseProduct(model.hyper().to_vector());
  if (!all_finite(grad)) return StepResult::SkippedNonFinite;

  const HyperState before = state;
  for (Eigen::Index i = 0; i < count; ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    // A zero noise level (log = -inf) stays fixed.
    if (!std::isfinite(state.theta_tilde[i])) continue;
    const int s = sign_of(grad[i]);
    const int agreement = state.prev_signs[i] * s;
    if (agreement > 0) {
      state.step_widths[i] = std::min(state.step_widths[i] * rprop.increase, rprop.max_step);
      state.theta_tilde[i] += s * state.step_widths[i];
      state.prev_signs[i] = s;
    } else if (agreement < 0) {
      state.step_widths[i] = std::max(state.step_widths[i] * rprop.decrease, rprop.min_step);
      state.prev_signs[i] = 0;
    } else {
      state.theta_tilde[i] += s * state.step_widths[i];
      state.prev_signs[i] = s;
    }
    state.theta_tilde[i] = std::clamp(state.theta_tilde[i], state.lower[i], state.upper[i]);
  }

  try {
    model.refresh(state.hyper());
  } catch (const NumericError&) {
    state = before;
    model.refresh(state.hyper());
    return StepResult::SkippedNonFinite;
  } catch (const UsageError&) {
    state = before;
    model.refresh(state.hyper());
    return StepResult::SkippedNonFinite;
  }
  return StepResult::Applied;
}

double route_probability(const RoutingNode& node, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double v = x[node.split_dim];
  const double half = 0.5 * node.overlap;
  if (v < node.split_value - half) return 0.0;
  if (v > node.split_value + half) return 1.0;
  if (node.overlap <= 0.0) return 0.5;  // v == split_value
  return (v - node.split_value) / node.overlap + 0.5;
}

RoutingNode choose_split(const gp::Dataset& leaf_data, double overlap_ratio) {
  if (leaf_data.empty()) throw DegenerateSplitError("cannot split an empty leaf");
  const Eigen::VectorXd lo = leaf_data.inputs.rowwise().minCoeff();
  const Eigen::VectorXd hi = leaf_data.inputs.rowwise().maxCoeff();
  const Eigen::VectorXd spread = hi - lo;
  int best = 0;
  for (int j = 1; j < spread.size(); ++j) {
    if (spread[j] > spread[best]) best = j;
  }
  if (!(spread[best] > 0.0)) throw DegenerateSplitError("all leaf inputs coincide");
  RoutingNode node;
  node.split_dim = best;
  node.split_value = leaf_data.inputs.row(best).mean();
  node.overlap = overlap_ratio * spread[best];
  return node;
}

LogGpTree::LogGpTree(int input_dim, TreeSettings settings)
    : input_dim_(input_dim), settings_(std::move(settings)), rng_(settings_.seed) {
  if (input_dim_ <= 0) throw UsageError("input dimension must be positive");
  if (settings_.max_leaf_size < 2) throw UsageError("leaf size bound must be at least 2");
  if (!(settings_.overlap_ratio >= 0.0 && settings_.overlap_ratio < 1.0))
    throw UsageError("overlap ratio must lie in [0, 1)");
  if (settings_.initial_hyper.input_dim() != input_dim_)
    throw UsageError("initial hyperparameters do not match the input dimension");
  if (!settings_.adapt_mask.empty() &&
      static_cast<int>(settings_.adapt_mask.size()) != input_dim_ + 2)
    throw UsageError("adaptation mask must have rho + 2 entries");

  Leaf root{gp::FactorizedModel(settings_.initial_hyper),
            HyperState::from_hyper(settings_.initial_hyper, settings_.rprop)};
  root.model.reserve(settings_.max_leaf_size + 1);
  leaves_.push_back(std::move(root));
  nodes_.push_back(Node{{}, -1, -1, 0});
}

double LogGpTree::uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

bool LogGpTree::sample_right(const RoutingNode& route,
                             const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double p = route_probability(route, x);
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform() < p;
}

void LogGpTree::insert(const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  if (x.size() != input_dim_) throw UsageError("insert: input dimension mismatch");
  if (!all_finite(x) || !std::isfinite(y)) {
    ++stats_.dropped_samples;
    throw DataError("non-finite training sample rejected");
  }

  int node = 0;
  for (;;) {
    while (!nodes_[node].is_leaf())
      node = sample_right(nodes_[node].route, x) ? nodes_[node].right : nodes_[node].left;
    Leaf& leaf = leaves_[static_cast<std::size_t>(nodes_[node].leaf)];
    if (leaf.model.size() < settings_.max_leaf_size) break;
    try {
      split_leaf(node);
    } catch (const DegenerateSplitError&) {
      leaf.model.remove_oldest();
      ++stats_.evictions;
      break;
    }
  }

  Leaf& leaf = leaves_[static_cast<std::size_t>(nodes_[node].leaf)];
  try {
    leaf.model.insert(x, y);
  } catch (const NumericError&) {
    ++stats_.dropped_samples;
    return;
  }
  ++stats_.total_count;
  adapt(leaf);
}

void LogGpTree::adapt(Leaf& leaf) {
  if (!settings_.adapt_hyper) return;
  if (hyper_update_step(leaf.model, leaf.hyper, settings_.rprop, settings_.adapt_mask) ==
      StepResult::SkippedNonFinite)
    ++stats_.skipped_updates;
}

void LogGpTree::split_leaf(int node_id) {
  const int leaf_id = nodes_[node_id].leaf;
  const gp::Dataset data = leaves_[static_cast<std::size_t>(leaf_id)].model.dataset();
  const RoutingNode route = choose_split(data, settings_.overlap_ratio);

  gp::Dataset left(input_dim_), right(input_dim_);
  for (int i = 0; i < data.size(); ++i) {
    if (sample_right(route, data.inputs.col(i)))
      right.push_back(data.inputs.col(i), data.targets[i]);
    else
      left.push_back(data.inputs.col(i), data.targets[i]);
  }

  const HyperState inherited = leaves_[static_cast<std::size_t>(leaf_id)].hyper;
  const gp::Hyperparameters hp = inherited.hyper();
  Leaf left_leaf{gp::FactorizedModel(left, hp), inherited};
  Leaf right_leaf{gp::FactorizedModel(right, hp), inherited};
  left_leaf.model.reserve(settings_.max_leaf_size + 1);
  right_leaf.model.reserve(settings_.max_leaf_size + 1);

  leaves_[static_cast<std::size_t>(leaf_id)] = std::move(left_leaf);
  const int right_id = static_cast<int>(leaves_.size());
  leaves_.push_back(std::move(right_leaf));

  const int left_node = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, -1, -1, leaf_id});
  nodes_.push_back(Node{{}, -1, -1, right_id});
  Node& parent = nodes_[node_id];
  parent.route = route;
  parent.left = left_node;
  parent.right = left_node + 1;
  parent.leaf = -1;
  ++stats_.splits;
}

std::vector<LeafWeight> LogGpTree::leaf_weights(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != input_dim_) throw UsageError("leaf_weights: input dimension mismatch");
  std::vector<LeafWeight> out;
  std::vector<std::pair<int, double>> stack;
  stack.reserve(64);
  stack.emplace_back(0, 1.0);
  while (!stack.empty()) {
    const auto [id, w] = stack.back();
    stack.pop_back();
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      out.push_back({n.leaf, w});
      continue;
    }
    const double p = route_probability(n.route, x);
    if (p < 1.0) stack.emplace_back(n.left, w * (1.0 - p));
    if (p > 0.0) stack.emplace_back(n.right, w * p);
  }
  return out;
}

double LogGpTree::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  double mu = 0.0;
  for (const auto& lw : leaf_weights(x)) {
    const Leaf& l = leaves_[static_cast<std::size_t>(lw.leaf)];
    if (!l.model.empty()) mu += lw.weight * l.model.mean(x);
  }
  return mu;
}

int LogGpTree::depth() const {
  int deepest = 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    const auto [id, d] = stack.back();
    stack.pop_back();
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      deepest = std::max(deepest, d);
    } else {
      stack.emplace_back(n.left, d + 1);
      stack.emplace_back(n.right, d + 1);
    }
  }
  return deepest;
}

std::vector<RoutingNode> LogGpTree::routing_nodes() const {
  std::vector<RoutingNode> out;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) continue;
    out.push_back(n.route);
    stack.push_back(n.right);
    stack.push_back(n.left);
  }
  return out;
}

void LogGpTree::check_partition() const {
  std::size_t stored = 0;
  for (const auto& l : leaves_) {
    if (l.model.size() > settings_.max_leaf_size)
      throw std::logic_error("leaf exceeds the size bound");
    stored += static_cast<std::size_t>(l.model.size());
  }
  if (stored + stats_.evictions != stats_.total_count)
    throw std::logic_error("leaf sizes do not add up to the inserted count");
}

VectorPredictor::VectorPredictor(int input_dim, int output_dim, const TreeSettings& settings) {
  if (output_dim <= 0) throw UsageError("output dimension must be positive");
  trees_.reserve(static_cast<std::size_t>(output_dim));
  for (int i = 0; i < output_dim; ++i) {
    TreeSettings s = settings;
    s.seed = derive_seed(settings.seed, static_cast<std::uint64_t>(i));
    trees_.emplace_back(input_dim, std::move(s));
  }
}

VectorPredictor::VectorPredictor(std::vector<LogGpTree> trees) : trees_(std::move(trees)) {
  for (const auto& t : trees_) {
    if (t.input_dim() != trees_.front().input_dim())
      throw UsageError("trees of a vector predictor must share the input dimension");
  }
}

Eigen::VectorXd VectorPredictor::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd mu(output_dim());
  for (int i = 0; i < output_dim(); ++i) mu[i] = trees_[static_cast<std::size_t>(i)].predict(x);
  return mu;
}

void VectorPredictor::update(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (y.size() != output_dim()) throw UsageError("update: target dimension mismatch");
  if (!parallel_ || trees_.size() < 2) {
    for (int i = 0; i < output_dim(); ++i) trees_[static_cast<std::size_t>(i)].insert(x, y[i]);
    return;
  }
  std::vector<std::exception_ptr> errors(trees_.size());
  std::vector<std::thread> workers;
  workers.reserve(trees_.size() - 1);
  for (std::size_t i = 1; i < trees_.size(); ++i) {
    workers.emplace_back([&, i] {
      try {
        trees_[i].insert(x, y[static_cast<Eigen::Index>(i)]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  try {
    trees_[0].insert(x, y[0]);
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rehab::loggp
