#pragma once

#include <Eigen/Core>

#include "rehab/errors.hpp"

namespace rehab::gp {

/// Squared-exponential kernel hyperparameters.
///
/// Vector form is (sigma_f, l_1 ... l_rho, sigma_on), the order used by the
/// likelihood gradient and by the online adaptation.
struct Hyperparameters {
  double sigma_f = 1.0;
  Eigen::VectorXd lengthscales;
  double sigma_on = 0.1;

  Hyperparameters() = default;
  Hyperparameters(double sf, Eigen::VectorXd ls, double sn)
      : sigma_f(sf), lengthscales(std::move(ls)), sigma_on(sn) {}

  int input_dim() const { return static_cast<int>(lengthscales.size()); }
  int parameter_count() const { return input_dim() + 2; }

  /// Throws UsageError unless sigma_f and lengthscales are strictly positive,
  /// sigma_on is nonnegative and everything is finite.
  void validate() const;

  Eigen::VectorXd to_vector() const;
  static Hyperparameters from_vector(const Eigen::VectorXd& theta);
};

/// Column-major training set: inputs is rho x N, one sample per column.
struct Dataset {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd targets;

  Dataset() = default;
  explicit Dataset(int input_dim) : inputs(input_dim, 0), targets(0) {}
  Dataset(Eigen::MatrixXd x, Eigen::VectorXd y);

  int size() const { return static_cast<int>(targets.size()); }
  int input_dim() const { return static_cast<int>(inputs.rows()); }
  bool empty() const { return targets.size() == 0; }

  void push_back(const Eigen::Ref<const Eigen::VectorXd>& x, double y);
};

/// Relative diagonal jitter tried first and on the single retry.
inline constexpr double kJitter = 1e-8;
inline constexpr double kJitterRetry = 1e-6;

double kernel_eval(const Eigen::Ref<const Eigen::VectorXd>& a,
                   const Eigen::Ref<const Eigen::VectorXd>& b,
                   const Hyperparameters& hp);

/// Noise-free kernel matrix K (no sigma_on, no jitter).
Eigen::MatrixXd kernel_matrix(const Dataset& data, const Hyperparameters& hp);

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact GP with a lower Cholesky factor of K + (sigma_on^2 + jitter sigma_f^2) I
/// that grows by one row per inserted sample.
///
/// Storage is over-allocated so that appending a sample costs one triangular
/// solve and never copies the factor.
class FactorizedModel {
 public:
  explicit FactorizedModel(Hyperparameters hp);
  FactorizedModel(const Dataset& data, Hyperparameters hp);

  int size() const { return n_; }
  bool empty() const { return n_ == 0; }
  int input_dim() const { return hp_.input_dim(); }
  const Hyperparameters& hyper() const { return hp_; }

  /// Relative jitter currently on the diagonal (kJitter or kJitterRetry).
  double jitter() const { return jitter_; }

  Dataset dataset() const;
  Eigen::Ref<const Eigen::MatrixXd> inputs() const { return inputs_.leftCols(n_); }
  Eigen::Ref<const Eigen::VectorXd> targets() const { return targets_.head(n_); }

  /// Lower-triangular factor, N x N.
  Eigen::MatrixXd factor() const;
  /// (K + sigma_on^2 I)^-1 y.
  Eigen::Ref<const Eigen::VectorXd> solved_targets() const { return alpha_.head(n_); }

  /// Appends (x, y) with an O(N^2) factor extension.
  void insert(const Eigen::Ref<const Eigen::VectorXd>& x, double y);

  /// Full refactorization under new hyperparameters.
  void refresh(const Hyperparameters& hp);

  /// Drops the first (oldest) sample and refactorizes.
  void remove_oldest();

  void reserve(int capacity);

  /// Mean only, O(N rho).
  double mean(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Posterior posterior(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  double log_likelihood() const;
  /// Gradient of the log marginal likelihood with respect to the raw
  /// hyperparameters, ordered as Hyperparameters::to_vector().
  Eigen::VectorXd log_likelihood_gradient() const;

 private:
  void check_input(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  void factorize();
  void update_alpha();
  double diagonal_term() const;

  Hyperparameters hp_;
  Eigen::MatrixXd inputs_;   // rho x capacity
  Eigen::VectorXd targets_;  // capacity
  Eigen::MatrixXd factor_;   // capacity x capacity, lower triangle of the leading n_ block
  Eigen::VectorXd alpha_;    // capacity
  int n_ = 0;
  double jitter_ = kJitter;
};

double log_marginal_likelihood(const Dataset& data, const Hyperparameters& hp);
Eigen::VectorXd log_likelihood_gradient(const Dataset& data, const Hyperparameters& hp);

}  // namespace rehab::gp
