#include "rehab/gp_exact.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace rehab::gp {

namespace {

// Unchecked squared-exponential kernel on raw column pointers.
inline double se_kernel(const double* a, const double* b, const double* inv_l2, int rho,
                        double sf2) {
  double r = 0.0;
  for (int i = 0; i < rho; ++i) {
    const double d = a[i] - b[i];
    r += d * d * inv_l2[i];
  }
  return sf2 * std::exp(-0.5 * r);
}

Eigen::VectorXd inverse_squared(const Eigen::VectorXd& ls) {
  return ls.array().square().inverse().matrix();
}

}  // namespace

void Hyperparameters::validate() const {
  if (!(std::isfinite(sigma_f) && sigma_f > 0.0))
    throw UsageError("sigma_f must be finite and positive");
  if (!(std::isfinite(sigma_on) && sigma_on >= 0.0))
    throw UsageError("sigma_on must be finite and nonnegative");
  if (lengthscales.size() == 0) throw UsageError("lengthscales must not be empty");
  for (Eigen::Index i = 0; i < lengthscales.size(); ++i) {
    if (!(std::isfinite(lengthscales[i]) && lengthscales[i] > 0.0))
      throw UsageError("lengthscale " + std::to_string(i) + " must be finite and positive");
  }
}

Eigen::VectorXd Hyperparameters::to_vector() const {
  Eigen::VectorXd theta(parameter_count());
  theta[0] = sigma_f;
  theta.segment(1, input_dim()) = lengthscales;
  theta[input_dim() + 1] = sigma_on;
  return theta;
}

Hyperparameters Hyperparameters::from_vector(const Eigen::VectorXd& theta) {
  if (theta.size() < 3) throw UsageError("hyperparameter vector needs at least 3 entries");
  const auto rho = theta.size() - 2;
  return Hyperparameters(theta[0], theta.segment(1, rho), theta[rho + 1]);
}

Dataset::Dataset(Eigen::MatrixXd x, Eigen::VectorXd y) : inputs(std::move(x)), targets(std::move(y)) {
  if (inputs.cols() != targets.size())
    throw UsageError("dataset inputs and targets differ in length");
}

void Dataset::push_back(const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  if (inputs.rows() == 0 && inputs.cols() == 0) inputs.resize(x.size(), 0);
  if (x.size() != inputs.rows()) throw UsageError("input dimension mismatch");
  const auto n = inputs.cols();
  inputs.conservativeResize(Eigen::NoChange, n + 1);
  inputs.col(n) = x;
  targets.conservativeResize(n + 1);
  targets[n] = y;
}

double kernel_eval(const Eigen::Ref<const Eigen::VectorXd>& a,
                   const Eigen::Ref<const Eigen::VectorXd>& b, const Hyperparameters& hp) {
  if (a.size() != b.size() || a.size() != hp.lengthscales.size())
    throw UsageError("kernel_eval: dimension mismatch");
  const double r = ((a - b).array() / hp.lengthscales.array()).square().sum();
  return hp.sigma_f * hp.sigma_f * std::exp(-0.5 * r);
}

Eigen::MatrixXd kernel_matrix(const Dataset& data, const Hyperparameters& hp) {
  const int n = data.size();
  const int rho = data.input_dim();
  if (n > 0 && rho != hp.input_dim()) throw UsageError("kernel_matrix: dimension mismatch");
  const Eigen::VectorXd inv_l2 = inverse_squared(hp.lengthscales);
  const double sf2 = hp.sigma_f * hp.sigma_f;
  Eigen::MatrixXd k(n, n);
  for (int j = 0; j < n; ++j) {
    k(j, j) = sf2;
    for (int i = j + 1; i < n; ++i) {
      k(i, j) = se_kernel(data.inputs.col(i).data(), data.inputs.col(j).data(), inv_l2.data(),
                          rho, sf2);
      k(j, i) = k(i, j);
    }
  }
  return k;
}

FactorizedModel::FactorizedModel(Hyperparameters hp) : hp_(std::move(hp)) {
  hp_.validate();
  inputs_.resize(hp_.input_dim(), 0);
}

FactorizedModel::FactorizedModel(const Dataset& data, Hyperparameters hp) : hp_(std::move(hp)) {
  hp_.validate();
  if (!data.empty() && data.input_dim() != hp_.input_dim())
    throw UsageError("dataset and hyperparameters differ in input dimension");
  reserve(data.size());
  n_ = data.size();
  inputs_.leftCols(n_) = data.inputs;
  targets_.head(n_) = data.targets;
  if (n_ > 0) {
    factorize();
    update_alpha();
  }
}

Dataset FactorizedModel::dataset() const {
  return Dataset(Eigen::MatrixXd(inputs_.leftCols(n_)), Eigen::VectorXd(targets_.head(n_)));
}

Eigen::MatrixXd FactorizedModel::factor() const {
  return factor_.topLeftCorner(n_, n_).triangularView<Eigen::Lower>();
}

void FactorizedModel::reserve(int capacity) {
  if (capacity <= inputs_.cols()) return;
  const int rho = hp_.input_dim();
  Eigen::MatrixXd inputs(rho, capacity);
  Eigen::VectorXd targets(capacity);
  Eigen::MatrixXd factor(capacity, capacity);
  Eigen::VectorXd alpha(capacity);
  inputs.leftCols(n_) = inputs_.leftCols(n_);
  targets.head(n_) = targets_.head(n_);
  factor.topLeftCorner(n_, n_) = factor_.topLeftCorner(n_, n_);
  alpha.head(n_) = alpha_.head(n_);
  inputs_.swap(inputs);
  targets_.swap(targets);
  factor_.swap(factor);
  alpha_.swap(alpha);
}

void FactorizedModel::check_input(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != hp_.input_dim()) throw UsageError("input dimension mismatch");
}

double FactorizedModel::diagonal_term() const {
  const double sf2 = hp_.sigma_f * hp_.sigma_f;
  return sf2 + hp_.sigma_on * hp_.sigma_on + jitter_ * sf2;
}

void FactorizedModel::factorize() {
  const int rho = hp_.input_dim();
  const Eigen::VectorXd inv_l2 = inverse_squared(hp_.lengthscales);
  const double sf2 = hp_.sigma_f * hp_.sigma_f;
  for (double jitter : {kJitter, kJitterRetry}) {
    jitter_ = jitter;
    const double diag = diagonal_term();
    for (int j = 0; j < n_; ++j) {
      factor_(j, j) = diag;
      const double* xj = inputs_.col(j).data();
      for (int i = j + 1; i < n_; ++i)
        factor_(i, j) = se_kernel(inputs_.col(i).data(), xj, inv_l2.data(), rho, sf2);
    }
    auto block = factor_.topLeftCorner(n_, n_);
    const Eigen::Index failed = Eigen::internal::llt_inplace<double, Eigen::Lower>::blocked(block);
    if (failed < 0) return;
    if (jitter == kJitterRetry)
      throw NumericError("kernel matrix not positive definite at leading minor " +
                             std::to_string(failed),
                         static_cast<long>(failed));
  }
}

void FactorizedModel::update_alpha() {
  auto l = factor_.topLeftCorner(n_, n_).triangularView<Eigen::Lower>();
  auto a = alpha_.head(n_);
  a = targets_.head(n_);
  l.solveInPlace(a);
  l.transpose().solveInPlace(a);
}

void FactorizedModel::insert(const Eigen::Ref<const Eigen::VectorXd>& x, double y) {
  check_input(x);
  if (n_ == inputs_.cols()) reserve(std::max(8, 2 * n_));
  const int rho = hp_.input_dim();
  const Eigen::VectorXd inv_l2 = inverse_squared(hp_.lengthscales);
  const double sf2 = hp_.sigma_f * hp_.sigma_f;

  inputs_.col(n_) = x;
  targets_[n_] = y;

  Eigen::VectorXd row(n_);
  for (int i = 0; i < n_; ++i)
    row[i] = se_kernel(inputs_.col(i).data(), x.data(), inv_l2.data(), rho, sf2);
  if (n_ > 0) factor_.topLeftCorner(n_, n_).triangularView<Eigen::Lower>().solveInPlace(row);
  factor_.row(n_).head(n_) = row.transpose();
  const double pivot = diagonal_term() - row.squaredNorm();
  if (pivot > 0.0 && std::isfinite(pivot)) {
    factor_(n_, n_) = std::sqrt(pivot);
    ++n_;
  } else {
    // Near-duplicate input: refactor everything with the larger jitter.
    if (jitter_ == kJitterRetry)
      throw NumericError("non-positive pivot while inserting sample " + std::to_string(n_),
                         n_);
    ++n_;
    try {
      factorize();
    } catch (...) {
      --n_;
      factorize();
      throw;
    }
  }
  update_alpha();
}

void FactorizedModel::refresh(const Hyperparameters& hp) {
  hp.validate();
  if (hp.input_dim() != hp_.input_dim()) throw UsageError("refresh: dimension mismatch");
  hp_ = hp;
  jitter_ = kJitter;
  if (n_ == 0) return;
  factorize();
  update_alpha();
}

void FactorizedModel::remove_oldest() {
  if (n_ == 0) return;
  const int rest = n_ - 1;
  inputs_.leftCols(rest) = inputs_.middleCols(1, rest).eval();
  targets_.head(rest) = targets_.segment(1, rest).eval();
  n_ = rest;
  jitter_ = kJitter;
  if (n_ == 0) return;
  factorize();
  update_alpha();
}

double FactorizedModel::mean(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  check_input(x);
  const int rho = hp_.input_dim();
  const Eigen::VectorXd inv_l2 = inverse_squared(hp_.lengthscales);
  const double sf2 = hp_.sigma_f * hp_.sigma_f;
  double m = 0.0;
  for (int i = 0; i < n_; ++i)
    m += alpha_[i] * se_kernel(inputs_.col(i).data(), x.data(), inv_l2.data(), rho, sf2);
  return m;
}

Posterior FactorizedModel::posterior(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  check_input(x);
  const double sf2 = hp_.sigma_f * hp_.sigma_f;
  if (n_ == 0) return {0.0, sf2};
  const int rho = hp_.input_dim();
  const Eigen::VectorXd inv_l2 = inverse_squared(hp_.lengthscales);
  Eigen::VectorXd k(n_);
  for (int i = 0; i < n_; ++i)
    k[i] = se_kernel(inputs_.col(i).data(), x.data(), inv_l2.data(), rho, sf2);
  Posterior p;
  p.mean = k.dot(alpha_.head(n_));
  factor_.topLeftCorner(n_, n_).triangularView<Eigen::Lower>().solveInPlace(k);
  p.variance = std::clamp(sf2 - k.squaredNorm(), 0.0, sf2);
  return p;
}

double FactorizedModel::log_likelihood() const {
  if (n_ == 0) throw UsageError("log likelihood of an empty model");
  const double quad = targets_.head(n_).dot(alpha_.head(n_));
  const double log_det_half = factor_.topLeftCorner(n_, n_).diagonal().array().log().sum();
  return -0.5 * quad - log_det_half - 0.5 * n_ * std::log(2.0 * std::numbers::pi);
}

Eigen::VectorXd FactorizedModel::log_likelihood_gradient() const {
  if (n_ == 0) throw UsageError("likelihood gradient of an empty model");
  const int rho = hp_.input_dim();
  const double sf2 = hp_.sigma_f * hp_.sigma_f;
  const Eigen::VectorXd inv_l2 = inverse_squared(hp_.lengthscales);

  // W = alpha alpha^T - (K + sigma_on^2 I)^-1; only the lower triangle is used.
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n_, n_);
  factor_.topLeftCorner(n_, n_).triangularView<Eigen::Lower>().solveInPlace(w);
  Eigen::MatrixXd kinv = Eigen::MatrixXd::Zero(n_, n_);
  kinv.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose());
  const auto alpha = alpha_.head(n_);
  w.noalias() = alpha * alpha.transpose();
  w -= kinv;

  double sum_wk = 0.0;
  Eigen::VectorXd sum_l = Eigen::VectorXd::Zero(rho);
  double trace_w = 0.0;
  for (int b = 0; b < n_; ++b) {
    trace_w += w(b, b);
    sum_wk += w(b, b) * sf2;
    const double* xb = inputs_.col(b).data();
    for (int a = b + 1; a < n_; ++a) {
      const double* xa = inputs_.col(a).data();
      double r = 0.0;
      for (int j = 0; j < rho; ++j) {
        const double d = xa[j] - xb[j];
        r += d * d * inv_l2[j];
      }
      const double wk = 2.0 * w(a, b) * sf2 * std::exp(-0.5 * r);
      sum_wk += wk;
      for (int j = 0; j < rho; ++j) {
        const double d = xa[j] - xb[j];
        sum_l[j] += wk * d * d;
      }
    }
  }

  Eigen::VectorXd grad(rho + 2);
  grad[0] = sum_wk / hp_.sigma_f + jitter_ * hp_.sigma_f * trace_w;
  for (int j = 0; j < rho; ++j) {
    const double l = hp_.lengthscales[j];
    grad[j + 1] = 0.5 * sum_l[j] / (l * l * l);
  }
  grad[rho + 1] = hp_.sigma_on * trace_w;
  return grad;
}

double log_marginal_likelihood(const Dataset& data, const Hyperparameters& hp) {
  if (data.empty()) throw UsageError("log likelihood needs at least one sample");
  return FactorizedModel(data, hp).log_likelihood();
}

Eigen::VectorXd log_likelihood_gradient(const Dataset& data, const Hyperparameters& hp) {
  if (data.empty()) throw UsageError("likelihood gradient needs at least one sample");
  return FactorizedModel(data, hp).log_likelihood_gradient();
}

}  // namespace rehab::gp
