#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "rehab/control.hpp"
#include "test_support.hpp"

using namespace rehab;
using namespace rehab::control;
using namespace rehab::testing;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

loggp::TreeSettings small_settings() {
  loggp::TreeSettings s;
  s.max_leaf_size = 30;
  s.adapt_hyper = false;
  s.initial_hyper = gp::Hyperparameters(1.0, Eigen::VectorXd::Constant(7, 0.5), 0.1);
  return s;
}

/// Largest task error over a run of the control law on a passive patient.
double closed_loop_error(ControllerKind kind, const Vec& q_offset, double horizon, double* final_error) {
  const plant::CartesianStage stage;
  const loggp::VectorPredictor empty(7, 2, small_settings());
  const Controller c =
      make_controller(kind, default_gains(kind), kind == ControllerKind::GP ? &empty : nullptr);
  const RoundedRectangle path;
  const double dt = 2.5e-4;
  plant::PlantState s{path.at(0.0).q + q_offset, path.at(0.0).qd, 0.0};
  double worst = 0.0;
  const long n = std::lround(horizon / dt);
  for (long k = 0; k < n; ++k) {
    const auto ref = path.at(s.t);
    worst = std::max(worst, (s.q - ref.q).norm());
    const Vec u = control_terms(c, stage, s.q, s.qd, ref, Vec::Zero(2), 40.0).total;
    s = plant::step(stage, s, u, nullptr, dt);
  }
  *final_error = (s.q - path.at(s.t).q).norm();
  return worst;
}

}  // namespace

TEST_CASE("rounded rectangle geometry") {
  const ReferenceConfig cfg;
  const RoundedRectangle path(cfg);
  const double a = cfg.half_extent_x, b = cfg.half_extent_y, r = cfg.corner_radius;
  CHECK(path.perimeter() == doctest::Approx(4 * (a - r) + 4 * (b - r) + 2 * std::numbers::pi * r));
  CHECK(path.speed() == doctest::Approx(path.perimeter() / cfg.period));

  const auto p0 = path.at(0.0), p10 = path.at(cfg.period);
  CHECK((p0.q - p10.q).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((p0.qd - p10.qd).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p0.q == vec2(a, 0.0));
  CHECK(p0.qd[1] > 0.0);
  const auto half = path.at(0.5 * cfg.period);
  CHECK((half.q - vec2(-a, 0.0)).cwiseAbs().maxCoeff() < 1e-12);

  double max_abs = 0.0;
  for (int k = 0; k < 20000; ++k) {
    const auto p = path.at(k * cfg.period / 20000.0);
    max_abs = std::max(max_abs, p.q.cwiseAbs().maxCoeff());
    CHECK(p.qd.norm() == doctest::Approx(path.speed()));
  }
  CHECK(max_abs == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(max_abs < 0.20);
  CHECK(reference(3.3).q == path.at(3.3).q);
  CHECK_THROWS_AS(reference(-1.0), UsageError);
  ReferenceConfig bad;
  bad.corner_radius = 0.2;
  CHECK_THROWS_AS(RoundedRectangle{bad}, UsageError);
}

TEST_CASE("reference derivatives match finite differences") {
  const RoundedRectangle path;
  const double h = 1e-6;
  std::mt19937_64 rng(1);
  int checked = 0;
  for (int k = 0; k < 500; ++k) {
    const double t = uniform(rng, 0.0, 20.0);
    const auto lo = path.at(t - h), mid = path.at(t), hi = path.at(t + h);
    // Skip samples whose stencil straddles a line/arc junction, where the
    // acceleration jumps by v^2 / r.
    if ((lo.qdd - hi.qdd).norm() > 1e-3) continue;
    ++checked;
    CHECK(((hi.q - lo.q) / (2 * h) - mid.qd).cwiseAbs().maxCoeff() < 1e-7);
    CHECK(((hi.qd - lo.qd) / (2 * h) - mid.qdd).cwiseAbs().maxCoeff() < 1e-5);
  }
  CHECK(checked > 450);
}

TEST_CASE("computed torque") {
  const plant::CartesianStage stage;
  const auto ref = RoundedRectangle().at(2.2);
  CHECK(ctc_torque(stage, vec2(0.1, 0.0), vec2(0.3, 0.3), ref) == stage.masses().cwiseProduct(ref.qdd));

  const plant::TwoLinkArm arm;
  const Vec q = vec2(0.5, 1.1), qd = vec2(0.2, -0.3);
  ReferencePoint still{vec2(0, 0), vec2(0, 0), vec2(0, 0)};
  CHECK(ctc_torque(arm, q, qd, still) == arm.gravity(q));
  ReferencePoint moving{vec2(0, 0), vec2(0.4, 0.1), vec2(-1.0, 2.0)};
  const Vec expected = arm.inertia(q) * moving.qdd + arm.coriolis(q, qd) * moving.qd + arm.gravity(q);
  CHECK((ctc_torque(arm, q, qd, moving) - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((ctc_torque(arm, q, moving.qd, moving) - plant::inverse_dynamics(arm, q, moving.qd, moving.qdd))
            .cwiseAbs()
            .maxCoeff() < 1e-14);
}

TEST_CASE("pd torque") {
  const Gains high{600.0, 60.0};
  CHECK(pd_torque(vec2(0, 0), vec2(0, 0), high) == vec2(0, 0));
  CHECK(pd_torque(vec2(0.01, 0), vec2(0, 0), high).isApprox(vec2(-6.0, 0.0)));
  const Vec e = vec2(0.02, -0.01), ed = vec2(0.1, 0.3);
  CHECK(pd_torque(2.0 * e, 2.0 * ed, high).isApprox(2.0 * pd_torque(e, ed, high)));
  CHECK(pd_torque(e, ed, {35.0, 3.5}).isApprox(vec2(-35 * 0.02 - 3.5 * 0.1, 35 * 0.01 - 3.5 * 0.3)));
}

TEST_CASE("gain table and controller construction") {
  CHECK(default_gains(ControllerKind::LowGain).kp == 1.0);
  CHECK(default_gains(ControllerKind::LowGain).kd == 0.1);
  CHECK(default_gains(ControllerKind::HighGain).kp == 600.0);
  CHECK(default_gains(ControllerKind::HighGain).kd == 60.0);
  CHECK(default_gains(ControllerKind::GP).kp == 1.0);
  CHECK(default_gains(ControllerKind::GP).kd == 0.1);
  CHECK(default_gains(ControllerKind::TunedPD).kp == 35.0);
  CHECK(default_gains(ControllerKind::TunedPD).kd == 3.5);

  for (auto k : {ControllerKind::LowGain, ControllerKind::HighGain, ControllerKind::GP, ControllerKind::TunedPD})
    CHECK(parse_controller_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_controller_kind("medium"), UsageError);

  const loggp::VectorPredictor vp(7, 2, small_settings());
  CHECK_THROWS_AS(make_controller(ControllerKind::GP, {1.0, 0.1}), UsageError);
  CHECK_THROWS_AS(make_controller(ControllerKind::LowGain, {1.0, 0.1}, &vp), UsageError);
  CHECK_THROWS_AS(make_controller(ControllerKind::LowGain, {0.0, 0.1}), UsageError);
  CHECK_NOTHROW(make_controller(ControllerKind::GP, {1.0, 0.1}, &vp));
}

TEST_CASE("learned feedforward enters additively and the output is clamped") {
  const plant::CartesianStage stage;
  loggp::VectorPredictor vp(7, 2, small_settings());
  const auto gp = make_controller(ControllerKind::GP, default_gains(ControllerKind::GP), &vp);
  const auto low = make_controller(ControllerKind::LowGain, default_gains(ControllerKind::LowGain));
  const auto ref = RoundedRectangle().at(1.0);
  const Vec q = vec2(0.14, 0.05), qd = vec2(0.0, 0.1);
  const Eigen::VectorXd x = plant::pack_input(q, qd, vec2(0, 0), 1.0);

  // Empty predictor: identical to the low-gain law.
  CHECK(control_torque(gp, stage, q, qd, ref, x, 40.0) == control_torque(low, stage, q, qd, ref, x, 40.0));

  std::mt19937_64 rng(2);
  for (int k = 0; k < 200; ++k) {
    const Eigen::VectorXd xi = random_vector(rng, 7, 0.3);
    vp.update(xi, Eigen::Vector2d(3.0 * xi[0], -2.0 * xi[1]));
  }
  const Vec diff = control_torque(gp, stage, q, qd, ref, x, 1e9) - control_torque(low, stage, q, qd, ref, x, 1e9);
  CHECK((diff - Vec(vp.predict(x))).cwiseAbs().maxCoeff() < 1e-12);

  const auto terms = control_terms(gp, stage, q, qd, ref, vec2(100.0, -100.0), 40.0);
  CHECK(terms.total == vec2(40.0, -40.0));
  CHECK(terms.unclamped[0] > 40.0);
  const auto ignored = control_terms(low, stage, q, qd, ref, vec2(100.0, -100.0), 40.0);
  CHECK(ignored.feedforward == vec2(0, 0));
}

TEST_CASE("every variant tracks a passive patient from a perfect start") {
  // The only disturbance is the torque being held over each 0.25 ms tick.
  for (auto kind : {ControllerKind::LowGain, ControllerKind::HighGain, ControllerKind::GP, ControllerKind::TunedPD}) {
    double final_error = 0.0;
    CHECK(closed_loop_error(kind, vec2(0, 0), 10.0, &final_error) < 2e-4);
  }
  double unused = 0.0;
  CHECK(closed_loop_error(ControllerKind::HighGain, vec2(0, 0), 10.0, &unused) < 1e-5);
}

TEST_CASE("initial errors decay under the stiffer gains") {
  double final_high = 0.0, final_tuned = 0.0;
  closed_loop_error(ControllerKind::HighGain, vec2(0.01, -0.01), 2.0, &final_high);
  closed_loop_error(ControllerKind::TunedPD, vec2(0.01, -0.01), 10.0, &final_tuned);
  // Error dynamics m e'' + kd e' + kp e = 0: envelope exp(-kd t / 2m).
  const double start = std::sqrt(2.0) * 0.01;
  CHECK(final_high < start * std::exp(-60.0 * 2.0 / 12.0) * 10.0);
  CHECK(final_tuned < start * std::exp(-3.5 * 10.0 / 12.0) * 10.0);
  CHECK(final_high < 1e-5);
}
