#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>
#include <Eigen/LU>

#include "rehab/gp_exact.hpp"

namespace rehab::testing {

/// Squared-exponential kernel written out directly from its definition.
inline double oracle_kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                            const gp::Hyperparameters& hp) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double r = (a[i] - b[i]) / hp.lengthscales[i];
    s += r * r;
  }
  return hp.sigma_f * hp.sigma_f * std::exp(-0.5 * s);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double scale) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(rng, -scale, scale);
  return v;
}

inline gp::Hyperparameters random_hyper(std::mt19937_64& rng, int rho) {
  Eigen::VectorXd ls(rho);
  for (int i = 0; i < rho; ++i) ls[i] = uniform(rng, 0.3, 2.0);
  return {uniform(rng, 0.5, 2.0), ls, uniform(rng, 0.05, 0.5)};
}

/// Smooth targets plus a little noise on inputs drawn from [-1, 1]^rho.
inline gp::Dataset random_dataset(std::mt19937_64& rng, int n, int rho) {
  gp::Dataset d(rho);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x = random_vector(rng, rho, 1.0);
    d.push_back(x, std::sin(2.0 * x[0]) + 0.5 * x.sum() + uniform(rng, -0.05, 0.05));
  }
  return d;
}

/// Central differences of the log marginal likelihood in raw hyperparameters.
inline Eigen::VectorXd finite_difference_gradient(const gp::Dataset& d, const gp::Hyperparameters& hp, double h) {
  const Eigen::VectorXd theta = hp.to_vector();
  Eigen::VectorXd g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd up = theta, down = theta;
    up[i] += h;
    down[i] -= h;
    g[i] = (gp::log_marginal_likelihood(d, gp::Hyperparameters::from_vector(up)) -
            gp::log_marginal_likelihood(d, gp::Hyperparameters::from_vector(down))) /
           (2.0 * h);
  }
  return g;
}

/// Relative error with an absolute floor so near-zero components compare sensibly.
inline double relative_error(double got, double want, double floor = 1e-6) {
  return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor});
}

/// Exact posterior mean by a dense LU solve, with the same diagonal jitter
/// the factorized models carry.
inline Eigen::VectorXd oracle_posterior_mean(const gp::Dataset& d, const gp::Hyperparameters& hp,
                                             const Eigen::MatrixXd& queries) {
  const int n = d.size();
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) k(i, j) = oracle_kernel(d.inputs.col(i), d.inputs.col(j), hp);
  k.diagonal().array() += hp.sigma_on * hp.sigma_on + gp::kJitter * hp.sigma_f * hp.sigma_f;
  const Eigen::VectorXd alpha = k.fullPivLu().solve(d.targets);
  Eigen::VectorXd out(queries.cols());
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    double m = 0.0;
    for (int i = 0; i < n; ++i) m += oracle_kernel(queries.col(q), d.inputs.col(i), hp) * alpha[i];
    out[q] = m;
  }
  return out;
}

}  // namespace rehab::testing
