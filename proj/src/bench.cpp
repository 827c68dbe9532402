#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "rehab/harness.hpp"

namespace rehab::harness {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

constexpr int kBenchDof = 2;

double micros(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

/// Smooth synthetic stream resembling the rehabilitation inputs:
/// a slowly drifting ellipse in (q, qd, qdd) plus time.
class SyntheticStream {
 public:
  SyntheticStream(double tau, std::uint64_t seed) : tau_(tau), rng_(seed) {}

  void next(Eigen::VectorXd& x, Eigen::VectorXd& y) {
    const double t = static_cast<double>(k_++) * tau_;
    const double w = 2.0 * std::numbers::pi / 10.0;
    const double a = 0.15 * (1.0 + 0.2 * std::sin(0.013 * t));
    const double b = 0.10 * (1.0 + 0.2 * std::cos(0.017 * t));
    const double c = std::cos(w * t), s = std::sin(w * t);
    x.resize(3 * kBenchDof + 1);
    x << a * c, b * s, -a * w * s, b * w * c, -a * w * w * c, -b * w * w * s, t;
    y.resize(kBenchDof);
    y[0] = 20.0 * x[0] * std::exp(-t / 300.0) + 3.0 * x[2] + 0.3 * std::sin(40.0 * t) + 0.05 * normal_(rng_);
    y[1] = 25.0 * x[1] * std::exp(-t / 200.0) + 2.0 * x[3] + 0.3 * std::cos(35.0 * t) + 0.05 * normal_(rng_);
  }

 private:
  double tau_;
  std::size_t k_ = 0;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

json stats_json(const LatencyStats& s) {
  return {{"mean_us", s.mean}, {"p50_us", s.p50}, {"p99_us", s.p99}, {"max_us", s.max},
          {"over_budget", s.over_budget}};
}

int tree_depth(const loggp::VectorPredictor& vp) {
  int d = 0;
  for (int i = 0; i < vp.output_dim(); ++i) d = std::max(d, vp.tree(i).depth());
  return d;
}

std::size_t tree_leaves(const loggp::VectorPredictor& vp) {
  std::size_t n = 0;
  for (int i = 0; i < vp.output_dim(); ++i) n += vp.tree(i).leaf_count();
  return n;
}

}  // namespace

BenchReport run_bench(const ExperimentConfig& config, std::vector<std::size_t> sizes, std::size_t window,
                      std::size_t exact_n) {
  config.validate();
  if (sizes.empty()) throw UsageError("bench needs at least one size");
  if (window == 0) throw UsageError("bench window must be positive");
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  if (sizes.front() < window) throw UsageError("every bench size must be at least the window");

  BenchReport report;
  report.budget_ms = 1e3 * config.tick_period();
  const double budget_us = 1e3 * report.budget_ms;

  auto vp = make_predictor(config, kBenchDof, loggp::derive_seed(config.cohort.master_seed, 77));
  SyntheticStream stream(config.tick_period(), loggp::derive_seed(config.cohort.master_seed, 78));
  Eigen::VectorXd x, y, xq, yq;

  std::size_t inserted = 0;
  for (std::size_t n : sizes) {
    while (inserted < n - window) {
      stream.next(x, y);
      vp.update(x, y);
      ++inserted;
    }
    std::vector<double> up, pr, co;
    up.reserve(window);
    pr.reserve(window);
    co.reserve(window);
    while (inserted < n) {
      stream.next(x, y);
      const auto a = Clock::now();
      vp.update(x, y);
      const auto b = Clock::now();
      const Eigen::VectorXd mu = vp.predict(x);
      const auto c = Clock::now();
      if (!mu.allFinite()) throw NumericError("bench prediction is not finite", static_cast<long>(inserted));
      up.push_back(micros(a, b));
      pr.push_back(micros(b, c));
      co.push_back(micros(a, c));
      ++inserted;
    }
    BenchPoint point;
    point.n = n;
    point.update = latency_stats(std::move(up), budget_us);
    point.predict = latency_stats(std::move(pr), budget_us);
    point.combined = latency_stats(std::move(co), budget_us);
    point.max_depth = tree_depth(vp);
    point.leaves = tree_leaves(vp);
    report.points.push_back(point);
  }
  for (std::size_t i = 1; i < report.points.size(); ++i)
    report.growth_ratio.push_back(report.points[i].combined.mean / report.points[i - 1].combined.mean);

  if (exact_n > 0) {
    // One output of an unpartitioned GP doing the same per-tick work as a
    // leaf: insert, one likelihood-gradient step with refactorization, predict.
    const auto settings = tree_settings(config, kBenchDof, 0);
    SyntheticStream exact_stream(config.tick_period(), loggp::derive_seed(config.cohort.master_seed, 79));
    gp::Dataset data;
    for (std::size_t i = 0; i < exact_n; ++i) {
      exact_stream.next(x, y);
      data.push_back(x, y[0]);
    }
    gp::FactorizedModel model(data, settings.initial_hyper);
    model.reserve(static_cast<int>(exact_n) + 1);
    auto state = loggp::HyperState::from_hyper(settings.initial_hyper, settings.rprop);
    exact_stream.next(x, y);
    const auto a = Clock::now();
    model.insert(x, y[0]);
    loggp::hyper_update_step(model, state, settings.rprop, settings.adapt_mask);
    const auto b = Clock::now();
    const double mu = model.mean(x);
    const auto c = Clock::now();
    if (!std::isfinite(mu)) throw NumericError("exact baseline prediction is not finite", -1);
    report.exact_n = exact_n;
    report.exact_update_ms = 1e-3 * micros(a, b);
    report.exact_predict_ms = 1e-3 * micros(b, c);
    report.exact_update_ms_at_1e4 = report.exact_update_ms * std::pow(1e4 / static_cast<double>(exact_n), 3.0);
  }
  return report;
}

json bench_json(const BenchReport& report) {
  auto points = json::array();
  for (const auto& p : report.points)
    points.push_back({{"n", p.n},
                      {"update", stats_json(p.update)},
                      {"predict", stats_json(p.predict)},
                      {"combined", stats_json(p.combined)},
                      {"max_depth", p.max_depth},
                      {"leaves", p.leaves}});
  return {{"schema_version", kSummarySchemaVersion},
          {"budget_ms", report.budget_ms},
          {"points", points},
          {"growth_ratio", report.growth_ratio},
          {"exact_baseline",
           {{"n", report.exact_n},
            {"update_ms", report.exact_update_ms},
            {"predict_ms", report.exact_predict_ms},
            {"update_ms_extrapolated_1e4", report.exact_update_ms_at_1e4}}}};
}

}  // namespace rehab::harness
