#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "rehab/gp_exact.hpp"

namespace rehab::loggp {

/// Sign-based step adaptation constants, all in log-hyperparameter space.
struct RpropSettings {
  double initial_step = 0.01;
  double increase = 1.2;
  double decrease = 0.5;
  double min_step = 1e-6;
  double max_step = 0.5;
  /// Each log-hyperparameter stays within this distance of its initial
  /// value; zero leaves it unbounded.
  double max_log_deviation = 0.0;
};

/// Online hyperparameter state of one leaf.
///
/// theta_tilde holds log(sigma_f), log(l_1) ... log(l_rho), log(sigma_on);
/// the mapping to raw hyperparameters is the element-wise exponential.
struct HyperState {
  Eigen::VectorXd theta_tilde;
  Eigen::VectorXd step_widths;
  Eigen::VectorXi prev_signs;
  Eigen::VectorXd lower;  ///< box on theta_tilde
  Eigen::VectorXd upper;

  static HyperState from_hyper(const gp::Hyperparameters& hp, const RpropSettings& rprop);
  gp::Hyperparameters hyper() const;
};

/// Outcome of one adaptation step.
enum class StepResult { Applied, SkippedNonFinite, Disabled };

/// One iRprop- ascent step on the leaf's log likelihood followed by a
/// refactorization of `model` under the new hyperparameters.
///
/// `mask` selects which entries of theta_tilde may move; an empty mask adapts
/// all of them.
StepResult hyper_update_step(gp::FactorizedModel& model, HyperState& state,
                             const RpropSettings& rprop, const std::vector<bool>& mask = {});

struct RoutingNode {
  int split_dim = 0;
  double split_value = 0.0;
  double overlap = 0.0;
};

/// Probability of descending into the right child: saturating linear ramp of
/// width `overlap` centred on the split value.
double route_probability(const RoutingNode& node, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Split along the dimension of largest spread, at the mean, with overlap
/// proportional to that spread. Throws DegenerateSplitError on zero spread.
RoutingNode choose_split(const gp::Dataset& leaf_data, double overlap_ratio);

struct TreeSettings {
  int max_leaf_size = 100;
  double overlap_ratio = 0.1;
  bool adapt_hyper = true;
  RpropSettings rprop;
  /// Size rho + 2, or empty to adapt everything.
  std::vector<bool> adapt_mask;
  gp::Hyperparameters initial_hyper;
  std::uint64_t seed = 0;
};

struct Leaf {
  gp::FactorizedModel model;
  HyperState hyper;
};

struct LeafWeight {
  int leaf = 0;
  double weight = 0.0;
};

struct TreeStats {
  std::size_t total_count = 0;
  std::size_t dropped_samples = 0;
  std::size_t skipped_updates = 0;
  std::size_t evictions = 0;
  std::size_t splits = 0;
};

/// Locally growing random tree of exact GP experts.
class LogGpTree {
 public:
  LogGpTree(int input_dim, TreeSettings settings);

  int input_dim() const { return input_dim_; }
  const TreeSettings& settings() const { return settings_; }
  const TreeStats& stats() const { return stats_; }
  std::size_t total_count() const { return stats_.total_count; }
  bool empty() const { return stats_.total_count == 0; }

  std::size_t leaf_count() const { return leaves_.size(); }
  const Leaf& leaf(int id) const { return leaves_.at(static_cast<std::size_t>(id)); }
  int depth() const;

  /// Routes (x, y) to a leaf by Bernoulli sampling, splitting full leaves on
  /// the way, then adapts that leaf's hyperparameters. Non-finite samples are
  /// counted and rejected with DataError.
  void insert(const Eigen::Ref<const Eigen::VectorXd>& x, double y);

  /// Leaves with nonzero weight at x; the weights sum to one.
  std::vector<LeafWeight> leaf_weights(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Mixture-of-experts mean; zero (the prior mean) for an empty tree.
  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Routing nodes in preorder, for inspection and tests.
  std::vector<RoutingNode> routing_nodes() const;

  /// Throws std::logic_error unless the leaf sizes add up to total_count and
  /// no leaf exceeds the size bound.
  void check_partition() const;

 private:
  friend void write_tree(std::ostream&, const LogGpTree&);
  friend LogGpTree read_tree(std::istream&);

  struct Node {
    RoutingNode route;
    int left = -1;
    int right = -1;
    int leaf = -1;  // >= 0 for leaf nodes
    bool is_leaf() const { return leaf >= 0; }
  };

  double uniform();
  bool sample_right(const RoutingNode& route, const Eigen::Ref<const Eigen::VectorXd>& x);
  void split_leaf(int node_id);
  void adapt(Leaf& leaf);

  int input_dim_;
  TreeSettings settings_;
  std::vector<Node> nodes_;
  std::vector<Leaf> leaves_;
  std::mt19937_64 rng_;
  TreeStats stats_;
};

/// One tree per output dimension over a shared input.
class VectorPredictor {
 public:
  VectorPredictor() = default;
  /// Tree i is seeded with a value derived from (settings.seed, i).
  VectorPredictor(int input_dim, int output_dim, const TreeSettings& settings);
  explicit VectorPredictor(std::vector<LogGpTree> trees);

  int input_dim() const { return trees_.empty() ? 0 : trees_.front().input_dim(); }
  int output_dim() const { return static_cast<int>(trees_.size()); }
  const LogGpTree& tree(int i) const { return trees_.at(static_cast<std::size_t>(i)); }
  LogGpTree& tree(int i) { return trees_.at(static_cast<std::size_t>(i)); }

  /// Update tree dimensions on separate threads when true.
  void set_parallel(bool parallel) { parallel_ = parallel; }
  bool parallel() const { return parallel_; }

  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  void update(const Eigen::Ref<const Eigen::VectorXd>& x,
              const Eigen::Ref<const Eigen::VectorXd>& y);

 private:
  std::vector<LogGpTree> trees_;
  bool parallel_ = false;
};

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// Binary snapshots; layout in docs/snapshot_format.md.
void write_tree(std::ostream& out, const LogGpTree& tree);
LogGpTree read_tree(std::istream& in);
void write_snapshot(std::ostream& out, const VectorPredictor& predictor);
VectorPredictor read_snapshot(std::istream& in);

}  // namespace rehab::loggp
