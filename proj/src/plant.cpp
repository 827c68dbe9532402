#include "rehab/plant.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace rehab::plant {

bool PlantModel::within_workspace(const Vec& q) const {
  const Vec p = task_position(q);
  return p.allFinite() && p.cwiseAbs().maxCoeff() <= workspace_limit();
}

CartesianStage::CartesianStage(double mass_x, double mass_y, double limit) : limit_(limit) {
  if (!(mass_x > 0.0 && mass_y > 0.0)) throw UsageError("stage masses must be positive");
  if (!(limit > 0.0)) throw UsageError("workspace limit must be positive");
  masses_.resize(2);
  masses_ << mass_x, mass_y;
}

Mat CartesianStage::inertia(const Vec&) const { return masses_.asDiagonal(); }

Mat CartesianStage::coriolis(const Vec&, const Vec&) const { return Mat::Zero(2, 2); }

Vec CartesianStage::gravity(const Vec&) const { return Vec::Zero(2); }

Mat CartesianStage::task_jacobian(const Vec&) const { return Mat::Identity(2, 2); }

TwoLinkArm::TwoLinkArm(TwoLinkParams params) : p_(params) {
  if (!(p_.mass1 > 0 && p_.mass2 > 0 && p_.length1 > 0 && p_.length2 > 0))
    throw UsageError("link masses and lengths must be positive");
}

// Uniform rods: centre of mass at half length, I = m l^2 / 12 about it.
Mat TwoLinkArm::inertia(const Vec& q) const {
  const double lc1 = 0.5 * p_.length1, lc2 = 0.5 * p_.length2;
  const double i1 = p_.mass1 * p_.length1 * p_.length1 / 12.0;
  const double i2 = p_.mass2 * p_.length2 * p_.length2 / 12.0;
  const double c2 = std::cos(q[1]);
  Mat h(2, 2);
  h(0, 0) = p_.mass1 * lc1 * lc1 + i1 +
            p_.mass2 * (p_.length1 * p_.length1 + lc2 * lc2 + 2.0 * p_.length1 * lc2 * c2) + i2;
  h(0, 1) = p_.mass2 * (lc2 * lc2 + p_.length1 * lc2 * c2) + i2;
  h(1, 0) = h(0, 1);
  h(1, 1) = p_.mass2 * lc2 * lc2 + i2;
  return h;
}

Mat TwoLinkArm::coriolis(const Vec& q, const Vec& qd) const {
  const double lc2 = 0.5 * p_.length2;
  const double hc = -p_.mass2 * p_.length1 * lc2 * std::sin(q[1]);
  Mat c(2, 2);
  c(0, 0) = hc * qd[1];
  c(0, 1) = hc * (qd[0] + qd[1]);
  c(1, 0) = -hc * qd[0];
  c(1, 1) = 0.0;
  return c;
}

Vec TwoLinkArm::gravity(const Vec& q) const {
  const double lc1 = 0.5 * p_.length1, lc2 = 0.5 * p_.length2;
  const double c1 = std::cos(q[0]), c12 = std::cos(q[0] + q[1]);
  Vec g(2);
  g[0] = (p_.mass1 * lc1 + p_.mass2 * p_.length1) * p_.gravity * c1 + p_.mass2 * lc2 * p_.gravity * c12;
  g[1] = p_.mass2 * lc2 * p_.gravity * c12;
  return g;
}

Vec TwoLinkArm::task_position(const Vec& q) const {
  Vec p(2);
  p[0] = p_.length1 * std::cos(q[0]) + p_.length2 * std::cos(q[0] + q[1]) - p_.origin_x;
  p[1] = p_.length1 * std::sin(q[0]) + p_.length2 * std::sin(q[0] + q[1]) - p_.origin_y;
  return p;
}

Mat TwoLinkArm::task_jacobian(const Vec& q) const {
  const double s1 = std::sin(q[0]), c1 = std::cos(q[0]);
  const double s12 = std::sin(q[0] + q[1]), c12 = std::cos(q[0] + q[1]);
  Mat j(2, 2);
  j(0, 0) = -p_.length1 * s1 - p_.length2 * s12;
  j(0, 1) = -p_.length2 * s12;
  j(1, 0) = p_.length1 * c1 + p_.length2 * c12;
  j(1, 1) = p_.length2 * c12;
  return j;
}

MotionPoint TwoLinkArm::joint_motion(const MotionPoint& task) const {
  const double x = task.q[0] + p_.origin_x;
  const double y = task.q[1] + p_.origin_y;
  const double l1 = p_.length1, l2 = p_.length2;
  const double c2 = (x * x + y * y - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  if (!(std::abs(c2) < 1.0)) throw NumericError("task point outside the reachable annulus");
  MotionPoint out;
  out.q.resize(2);
  out.q[1] = std::acos(c2);
  out.q[0] = std::atan2(y, x) - std::atan2(l2 * std::sin(out.q[1]), l1 + l2 * std::cos(out.q[1]));

  const Mat j = task_jacobian(out.q);
  const auto lu = j.partialPivLu();
  out.qd = lu.solve(task.qd);
  const double s1 = std::sin(out.q[0]), c1 = std::cos(out.q[0]);
  const double s12 = std::sin(out.q[0] + out.q[1]), c12 = std::cos(out.q[0] + out.q[1]);
  const double w1 = out.qd[0], w12 = out.qd[0] + out.qd[1];
  Vec jdot_qd(2);
  jdot_qd[0] = -l1 * c1 * w1 * w1 - l2 * c12 * w12 * w12;
  jdot_qd[1] = -l1 * s1 * w1 * w1 - l2 * s12 * w12 * w12;
  out.qdd = lu.solve(task.qdd - jdot_qd);
  return out;
}

double TwoLinkArm::kinetic_energy(const Vec& q, const Vec& qd) const {
  return 0.5 * qd.dot(inertia(q) * qd);
}

Vec forward_accel(const PlantModel& model, const Vec& q, const Vec& qd, const Vec& u, const Vec& f) {
  const Mat h = model.inertia(q);
  const Vec rhs = u - model.coriolis(q, qd) * qd - model.gravity(q) - f;
  const Eigen::LLT<Mat> llt(h);
  if (llt.info() != Eigen::Success) throw NumericError("inertia matrix not positive definite");
  Vec qdd = llt.solve(rhs);
  if (!qdd.allFinite()) throw NumericError("non-finite acceleration");
  return qdd;
}

Vec inverse_dynamics(const PlantModel& model, const Vec& q, const Vec& qd, const Vec& qdd) {
  return model.inertia(q) * qdd + model.coriolis(q, qd) * qd + model.gravity(q);
}

PlantState step(const PlantModel& model, const PlantState& s, const Vec& u,
                const TorqueField& field, double dt) {
  if (!(dt > 0.0)) throw UsageError("integration step must be positive");
  auto accel = [&](const Vec& q, const Vec& qd, double t) {
    return forward_accel(model, q, qd, u, field ? field(q, qd, t) : Vec(Vec::Zero(q.size())));
  };
  const double h2 = 0.5 * dt;
  const Vec k1q = s.qd;
  const Vec k1v = accel(s.q, s.qd, s.t);
  const Vec q2 = s.q + h2 * k1q, v2 = s.qd + h2 * k1v;
  const Vec k2q = v2;
  const Vec k2v = accel(q2, v2, s.t + h2);
  const Vec q3 = s.q + h2 * k2q, v3 = s.qd + h2 * k2v;
  const Vec k3q = v3;
  const Vec k3v = accel(q3, v3, s.t + h2);
  const Vec q4 = s.q + dt * k3q, v4 = s.qd + dt * k3v;
  const Vec k4q = v4;
  const Vec k4v = accel(q4, v4, s.t + dt);

  PlantState out;
  out.q = s.q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
  out.qd = s.qd + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  out.t = s.t + dt;
  if (!out.q.allFinite() || !out.qd.allFinite()) throw NumericError("non-finite plant state");
  return out;
}

Eigen::VectorXd pack_input(const Vec& q, const Vec& qd, const Vec& qdd, double t) {
  const auto d = q.size();
  Eigen::VectorXd x(3 * d + 1);
  x.segment(0, d) = q;
  x.segment(d, d) = qd;
  x.segment(2 * d, d) = qdd;
  x[3 * d] = t;
  return x;
}

UnpackedInput unpack_input(const Eigen::Ref<const Eigen::VectorXd>& x, int dof) {
  if (x.size() != 3 * dof + 1) throw UsageError("input vector must have dimension 3d + 1");
  UnpackedInput u;
  u.q = x.segment(0, dof);
  u.qd = x.segment(dof, dof);
  u.qdd = x.segment(2 * dof, dof);
  u.t = x[3 * dof];
  return u;
}

TrainingPair residual_sample(const Vec& u, const Eigen::Ref<const Eigen::VectorXd>& x,
                             const PlantModel& model) {
  const auto in = unpack_input(x, model.dof());
  if (u.size() != model.dof()) throw UsageError("torque dimension mismatch");
  TrainingPair pair;
  pair.x = x;
  pair.y = u - inverse_dynamics(model, in.q, in.qd, in.qdd);
  return pair;
}

DifferentiatingSensor::DifferentiatingSensor(double sigma_q, double sigma_qd, double period,
                                             std::uint64_t seed)
    : sigma_q_(sigma_q), sigma_qd_(sigma_qd), period_(period), rng_(seed) {
  if (!(period > 0.0)) throw UsageError("sensor period must be positive");
  if (sigma_q < 0.0 || sigma_qd < 0.0) throw UsageError("noise levels must be nonnegative");
}

DifferentiatingSensor::Reading DifferentiatingSensor::observe(const Vec& q, const Vec& qd, double t) {
  Measurement m;
  m.t = t;
  m.q = q;
  m.qd = qd;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    m.q[i] += sigma_q_ * normal_(rng_);
    m.qd[i] += sigma_qd_ * normal_(rng_);
  }
  m.qdd = prev_ ? Vec((m.qd - prev_->qd) / period_) : Vec(Vec::Zero(q.size()));

  Reading r;
  r.current = m;
  if (prev_ && prev2_) {
    Measurement c = *prev_;
    c.qdd = (m.qd - prev2_->qd) / (2.0 * period_);
    r.central = c;
  }
  prev2_ = prev_;
  prev_ = m;
  return r;
}

}  // namespace rehab::plant
