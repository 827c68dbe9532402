#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <doctest.h>

#include "rehab/gp_exact.hpp"
#include "test_support.hpp"

using namespace rehab;
using namespace rehab::gp;
using namespace rehab::testing;

namespace {

/// Posterior from a dense LU solve of K + (sigma_on^2 + jitter) I, independent of
/// the Cholesky code.
struct DenseOracle {
  Eigen::MatrixXd k_noisy;
  Eigen::VectorXd alpha;

  DenseOracle(const Dataset& d, const Hyperparameters& hp) {
    const int n = d.size();
    k_noisy.resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) k_noisy(i, j) = oracle_kernel(d.inputs.col(i), d.inputs.col(j), hp);
    k_noisy.diagonal().array() += hp.sigma_on * hp.sigma_on + kJitter * hp.sigma_f * hp.sigma_f;
    alpha = k_noisy.fullPivLu().solve(d.targets);
  }

  Posterior at(const Dataset& d, const Hyperparameters& hp, const Eigen::VectorXd& x) const {
    Eigen::VectorXd k(d.size());
    for (int i = 0; i < d.size(); ++i) k[i] = oracle_kernel(x, d.inputs.col(i), hp);
    Posterior p;
    p.mean = k.dot(alpha);
    p.variance = hp.sigma_f * hp.sigma_f - k.dot(k_noisy.fullPivLu().solve(k));
    return p;
  }

  double log_likelihood(const Dataset& d) const {
    const double logdet = std::log(k_noisy.fullPivLu().determinant());
    return -0.5 * d.targets.dot(alpha) - 0.5 * logdet - 0.5 * d.size() * std::log(2.0 * std::numbers::pi);
  }
};

}  // namespace

TEST_CASE("kernel_eval hand values") {
  Hyperparameters hp(2.0, Eigen::VectorXd::Ones(3), 0.1);
  const Eigen::VectorXd a = Eigen::Vector3d(0.3, -1.0, 2.0);
  CHECK(kernel_eval(a, a, hp) == doctest::Approx(4.0).epsilon(1e-15));

  Hyperparameters h1(1.0, Eigen::VectorXd::Ones(1), 0.1);
  CHECK(kernel_eval(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, std::sqrt(2.0)), h1) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-14));

  Hyperparameters h2(1.0, Eigen::Vector2d(1.0, 2.0), 0.1);
  CHECK(kernel_eval(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 2), h2) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("kernel_eval is symmetric and bounded by sigma_f squared") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto hp = random_hyper(rng, 4);
    const Eigen::VectorXd a = random_vector(rng, 4, 3.0), b = random_vector(rng, 4, 3.0);
    const double kab = kernel_eval(a, b, hp);
    CHECK(kab == kernel_eval(b, a, hp));
    CHECK(kab > 0.0);
    CHECK(kab <= hp.sigma_f * hp.sigma_f);
  }
}

TEST_CASE("kernel_matrix shapes and entries") {
  Hyperparameters hp(1.5, Eigen::Vector2d(0.5, 2.0), 0.1);
  CHECK(kernel_matrix(Dataset(2), hp).size() == 0);
  Dataset one(2);
  one.push_back(Eigen::Vector2d(1, 1), 0.0);
  const auto k1 = kernel_matrix(one, hp);
  REQUIRE(k1.rows() == 1);
  CHECK(k1(0, 0) == doctest::Approx(2.25));
  Dataset two = one;
  two.push_back(Eigen::Vector2d(0.2, -1.0), 1.0);
  const auto k2 = kernel_matrix(two, hp);
  CHECK(k2(0, 1) == doctest::Approx(oracle_kernel(two.inputs.col(0), two.inputs.col(1), hp)).epsilon(1e-14));
  CHECK(k2(1, 0) == k2(0, 1));
}

TEST_CASE("hyperparameter validation") {
  CHECK_THROWS_AS(Hyperparameters(0.0, Eigen::VectorXd::Ones(2), 0.1).validate(), UsageError);
  CHECK_THROWS_AS(Hyperparameters(1.0, Eigen::Vector2d(1.0, -1.0), 0.1).validate(), UsageError);
  CHECK_THROWS_AS(Hyperparameters(1.0, Eigen::VectorXd::Ones(2), -0.1).validate(), UsageError);
  CHECK_THROWS_AS(Hyperparameters(1.0, Eigen::Vector2d(1.0, NAN), 0.1).validate(), UsageError);
  CHECK_NOTHROW(Hyperparameters(1.0, Eigen::VectorXd::Ones(2), 0.0).validate());
  const Hyperparameters hp(1.3, Eigen::Vector3d(0.1, 0.2, 0.3), 0.05);
  const auto v = hp.to_vector();
  REQUIRE(v.size() == 5);
  CHECK(v[0] == 1.3);
  CHECK(v[4] == 0.05);
  const auto back = Hyperparameters::from_vector(v);
  CHECK(back.lengthscales == hp.lengthscales);
}

TEST_CASE("log likelihood scalar closed forms") {
  const double two_pi = 2.0 * std::numbers::pi;
  Hyperparameters hp(1.2, Eigen::VectorXd::Ones(1), 0.3);
  Dataset d(1);
  d.push_back(Eigen::VectorXd::Zero(1), 0.0);
  const double s2 = 1.44 + 0.09;
  // Jitter 1e-8 sigma_f^2 shifts the variance by ~1e-8 relative.
  CHECK(log_marginal_likelihood(d, hp) == doctest::Approx(-0.5 * std::log(s2) - 0.5 * std::log(two_pi)).epsilon(1e-7));

  Hyperparameters unit(1.0, Eigen::VectorXd::Ones(1), 0.0);
  Dataset e(1);
  e.push_back(Eigen::VectorXd::Zero(1), 1.0);
  CHECK(log_marginal_likelihood(e, unit) == doctest::Approx(-0.5 - 0.5 * std::log(two_pi)).epsilon(1e-7));
}

TEST_CASE("log likelihood decreases as targets are scaled up") {
  std::mt19937_64 rng(5);
  const auto d = random_dataset(rng, 15, 3);
  const auto hp = random_hyper(rng, 3);
  double prev = log_marginal_likelihood(d, hp);
  for (double s : {2.0, 4.0, 8.0}) {
    Dataset scaled = d;
    scaled.targets *= s;
    const double ll = log_marginal_likelihood(scaled, hp);
    CHECK(ll < prev);
    prev = ll;
  }
}

TEST_CASE("log likelihood matches a dense determinant oracle") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = random_dataset(rng, 12, 3);
    const auto hp = random_hyper(rng, 3);
    const DenseOracle oracle(d, hp);
    CHECK(log_marginal_likelihood(d, hp) == doctest::Approx(oracle.log_likelihood(d)).epsilon(1e-6));
  }
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const auto d = random_dataset(rng, 20, 3);
    const auto hp = random_hyper(rng, 3);
    const auto grad = log_likelihood_gradient(d, hp);
    const auto fd = finite_difference_gradient(d, hp, 1e-5);
    for (int i = 0; i < grad.size(); ++i)
      CHECK(relative_error(grad[i], fd[i]) < 1e-4);
  }
}

TEST_CASE("gradient scalar closed form for sigma_f") {
  Hyperparameters hp(1.5, Eigen::VectorXd::Ones(1), 0.4);
  Dataset d(1);
  d.push_back(Eigen::VectorXd::Zero(1), 0.0);
  const double s2 = hp.sigma_f * hp.sigma_f + hp.sigma_on * hp.sigma_on;
  const double expected = -0.5 * (2.0 * hp.sigma_f) / s2;
  const auto g = log_likelihood_gradient(d, hp);
  CHECK(g[0] < 0.0);
  CHECK(g[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("gradient is invariant under reordering mirrored data") {
  Dataset a(2), b(2);
  const Eigen::Vector2d p(0.7, 0.1), m(-0.7, 0.1);
  a.push_back(p, 1.0);
  a.push_back(m, 1.0);
  b.push_back(m, 1.0);
  b.push_back(p, 1.0);
  Hyperparameters hp(1.0, Eigen::Vector2d(0.5, 1.0), 0.1);
  const auto ga = log_likelihood_gradient(a, hp), gb = log_likelihood_gradient(b, hp);
  CHECK(ga[1] == doctest::Approx(gb[1]).epsilon(1e-12));
}

TEST_CASE("posterior interpolates and reverts to the prior") {
  Hyperparameters hp(1.3, Eigen::VectorXd::Ones(2), 0.0);
  Dataset d(2);
  d.push_back(Eigen::Vector2d(0.5, -0.5), 0.8);
  const FactorizedModel model(d, hp);
  const auto at = model.posterior(Eigen::Vector2d(0.5, -0.5));
  CHECK(at.mean == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(at.variance == doctest::Approx(0.0).epsilon(1e-6));
  const auto far = model.posterior(Eigen::Vector2d(20.0, 20.0));
  CHECK(std::abs(far.mean) < 1e-6);
  CHECK(far.variance == doctest::Approx(hp.sigma_f * hp.sigma_f).epsilon(1e-6));
}

TEST_CASE("posterior matches the dense oracle") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = random_dataset(rng, 10, 4);
    const auto hp = random_hyper(rng, 4);
    const FactorizedModel model(d, hp);
    const DenseOracle oracle(d, hp);
    for (int q = 0; q < 10; ++q) {
      const Eigen::VectorXd x = random_vector(rng, 4, 2.0);
      const auto got = model.posterior(x);
      const auto want = oracle.at(d, hp, x);
      CHECK(std::abs(got.mean - want.mean) < 1e-8);
      CHECK(std::abs(got.variance - want.variance) < 1e-8);
      CHECK(got.mean == doctest::Approx(model.mean(x)).epsilon(1e-12));
      CHECK(got.variance >= 0.0);
      CHECK(got.variance <= hp.sigma_f * hp.sigma_f);
    }
    for (int i = 0; i < d.size(); ++i)
      CHECK(model.posterior(d.inputs.col(i)).variance <= hp.sigma_on * hp.sigma_on + 1e-8);
  }
}

TEST_CASE("incremental insertion reproduces batch factorization") {
  std::mt19937_64 rng(44);
  const auto d = random_dataset(rng, 50, 3);
  const auto hp = random_hyper(rng, 3);
  FactorizedModel inc(hp);
  REQUIRE(inc.empty());
  inc.insert(d.inputs.col(0), d.targets[0]);
  CHECK(inc.factor()(0, 0) ==
        doctest::Approx(std::sqrt(hp.sigma_f * hp.sigma_f * (1.0 + kJitter) + hp.sigma_on * hp.sigma_on)));
  for (int i = 1; i < d.size(); ++i) inc.insert(d.inputs.col(i), d.targets[i]);
  const FactorizedModel batch(d, hp);
  CHECK((inc.factor() - batch.factor()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((inc.solved_targets() - batch.solved_targets()).cwiseAbs().maxCoeff() < 1e-8);

  Eigen::MatrixXd k = kernel_matrix(d, hp);
  k.diagonal().array() += hp.sigma_on * hp.sigma_on + inc.jitter() * hp.sigma_f * hp.sigma_f;
  const Eigen::MatrixXd l = inc.factor();
  CHECK((l * l.transpose() - k).cwiseAbs().maxCoeff() < 1e-8 * d.size());
}

TEST_CASE("insertion order does not change the posterior") {
  std::mt19937_64 rng(45);
  const auto d = random_dataset(rng, 30, 2);
  const auto hp = random_hyper(rng, 2);
  std::vector<int> order(static_cast<std::size_t>(d.size()));
  for (int i = 0; i < d.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  FactorizedModel a(hp), b(hp);
  for (int i = 0; i < d.size(); ++i) a.insert(d.inputs.col(i), d.targets[i]);
  for (int i : order) b.insert(d.inputs.col(i), d.targets[i]);
  for (int q = 0; q < 20; ++q) {
    const Eigen::VectorXd x = random_vector(rng, 2, 2.0);
    CHECK(std::abs(a.mean(x) - b.mean(x)) < 1e-6);
    CHECK(std::abs(a.posterior(x).variance - b.posterior(x).variance) < 1e-6);
  }
  CHECK(a.log_likelihood() == doctest::Approx(b.log_likelihood()).epsilon(1e-9));
}

TEST_CASE("insert reduces variance at the new input") {
  std::mt19937_64 rng(46);
  const auto d = random_dataset(rng, 10, 2);
  const auto hp = random_hyper(rng, 2);
  FactorizedModel model(d, hp);
  const Eigen::VectorXd x = random_vector(rng, 2, 1.0);
  const double before = model.posterior(x).variance;
  model.insert(x, 0.5);
  CHECK(model.posterior(x).variance < before);
}

TEST_CASE("refresh is a no-op for identical hyperparameters and matches the oracle otherwise") {
  std::mt19937_64 rng(47);
  const auto d = random_dataset(rng, 25, 3);
  const auto hp = random_hyper(rng, 3);
  FactorizedModel model(d, hp);
  const Eigen::MatrixXd before = model.factor();
  model.refresh(hp);
  CHECK((model.factor() - before).cwiseAbs().maxCoeff() < 1e-12);

  const auto other = random_hyper(rng, 3);
  model.refresh(other);
  const DenseOracle oracle(d, other);
  const Eigen::VectorXd x = random_vector(rng, 3, 1.0);
  CHECK(std::abs(model.mean(x) - oracle.at(d, other, x).mean) < 1e-8);

  FactorizedModel empty(hp);
  CHECK_NOTHROW(empty.refresh(other));
  CHECK(empty.mean(x) == 0.0);
}

TEST_CASE("remove_oldest drops the first sample") {
  std::mt19937_64 rng(48);
  const auto d = random_dataset(rng, 8, 2);
  const auto hp = random_hyper(rng, 2);
  FactorizedModel model(d, hp);
  model.remove_oldest();
  REQUIRE(model.size() == 7);
  const Dataset rest(d.inputs.rightCols(7), d.targets.tail(7));
  const FactorizedModel oracle(rest, hp);
  const Eigen::VectorXd x = random_vector(rng, 2, 1.0);
  CHECK(model.mean(x) == doctest::Approx(oracle.mean(x)).epsilon(1e-12));
}

TEST_CASE("duplicate inputs survive through jitter") {
  Hyperparameters hp(1.0, Eigen::VectorXd::Ones(2), 0.0);
  FactorizedModel model(hp);
  for (int i = 0; i < 20; ++i) model.insert(Eigen::Vector2d(0.1, 0.2), 1.0);
  CHECK(std::isfinite(model.mean(Eigen::Vector2d(0.1, 0.2))));
  CHECK(model.mean(Eigen::Vector2d(0.1, 0.2)) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("dimension mismatches are rejected") {
  FactorizedModel model(Hyperparameters(1.0, Eigen::VectorXd::Ones(2), 0.1));
  CHECK_THROWS_AS(model.insert(Eigen::VectorXd::Zero(3), 0.0), UsageError);
  CHECK_THROWS_AS(model.mean(Eigen::VectorXd::Zero(1)), UsageError);
}
