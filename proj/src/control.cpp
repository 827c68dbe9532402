#include "rehab/control.hpp"

#include <cmath>
#include <numbers>

namespace rehab::control {

RoundedRectangle::RoundedRectangle(const ReferenceConfig& config) : config_(config) {
  const double a = config.half_extent_x, b = config.half_extent_y, r = config.corner_radius;
  if (!(r > 0.0 && a >= r && b >= r)) throw UsageError("corner radius must fit inside the rectangle");
  if (!(config.period > 0.0)) throw UsageError("reference period must be positive");
  constexpr double kPi = std::numbers::pi;

  auto line = [&](double x0, double y0, double x1, double y1) {
    Segment s;
    s.length = std::hypot(x1 - x0, y1 - y0);
    s.px = x0;
    s.py = y0;
    if (s.length > 0.0) {
      s.dx = (x1 - x0) / s.length;
      s.dy = (y1 - y0) / s.length;
    }
    return s;
  };
  auto arc = [&](double cx, double cy, double angle0) {
    Segment s;
    s.arc = true;
    s.length = 0.5 * kPi * r;
    s.px = cx;
    s.py = cy;
    s.angle0 = angle0;
    return s;
  };

  const std::vector<Segment> pieces = {
      line(a, 0.0, a, b - r),
      arc(a - r, b - r, 0.0),
      line(a - r, b, -a + r, b),
      arc(-a + r, b - r, 0.5 * kPi),
      line(-a, b - r, -a, -b + r),
      arc(-a + r, -b + r, kPi),
      line(-a + r, -b, a - r, -b),
      arc(a - r, -b + r, 1.5 * kPi),
      line(a, -b + r, a, 0.0),
  };
  for (const auto& p : pieces) {
    if (p.length <= 0.0) continue;
    Segment s = p;
    s.start = perimeter_;
    perimeter_ += s.length;
    segments_.push_back(s);
  }
  speed_ = perimeter_ / config.period;
}

ReferencePoint RoundedRectangle::at(double t) const {
  double s = std::fmod(speed_ * t, perimeter_);
  if (s < 0.0) s += perimeter_;
  const Segment* seg = &segments_.back();
  for (const auto& candidate : segments_) {
    if (s < candidate.start + candidate.length) {
      seg = &candidate;
      break;
    }
  }
  const double along = s - seg->start;
  ReferencePoint ref;
  ref.q.resize(2);
  ref.qd.resize(2);
  ref.qdd.resize(2);
  if (!seg->arc) {
    ref.q << seg->px + seg->dx * along, seg->py + seg->dy * along;
    ref.qd << speed_ * seg->dx, speed_ * seg->dy;
    ref.qdd.setZero();
  } else {
    const double r = config_.corner_radius;
    const double phi = seg->angle0 + along / r;
    const double c = std::cos(phi), sn = std::sin(phi);
    ref.q << seg->px + r * c, seg->py + r * sn;
    ref.qd << -speed_ * sn, speed_ * c;
    const double centripetal = speed_ * speed_ / r;
    ref.qdd << -centripetal * c, -centripetal * sn;
  }
  return ref;
}

ReferencePoint reference(double t, const ReferenceConfig& config) {
  if (!(t >= 0.0)) throw UsageError("reference time must be nonnegative");
  return RoundedRectangle(config).at(t);
}

std::string_view to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::LowGain: return "low";
    case ControllerKind::HighGain: return "high";
    case ControllerKind::GP: return "gp";
    case ControllerKind::TunedPD: return "tuned";
  }
  return "unknown";
}

ControllerKind parse_controller_kind(std::string_view name) {
  if (name == "low") return ControllerKind::LowGain;
  if (name == "high") return ControllerKind::HighGain;
  if (name == "gp") return ControllerKind::GP;
  if (name == "tuned") return ControllerKind::TunedPD;
  throw UsageError("unknown controller '" + std::string(name) + "' (expected low|high|gp|tuned)");
}

void Gains::validate() const {
  if (!(kp > 0.0 && kd > 0.0 && std::isfinite(kp) && std::isfinite(kd)))
    throw UsageError("PD gains must be positive and finite");
}

Gains default_gains(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::LowGain: return {1.0, 0.1};
    case ControllerKind::HighGain: return {600.0, 60.0};
    case ControllerKind::GP: return {1.0, 0.1};
    case ControllerKind::TunedPD: return {35.0, 3.5};
  }
  throw UsageError("unknown controller kind");
}

Controller make_controller(ControllerKind kind, Gains gains, const loggp::VectorPredictor* predictor) {
  gains.validate();
  if (kind == ControllerKind::GP && predictor == nullptr)
    throw UsageError("the GP controller needs a predictor");
  if (kind != ControllerKind::GP && predictor != nullptr)
    throw UsageError("only the GP controller carries a predictor");
  return Controller{kind, gains, predictor};
}

Vec ctc_torque(const plant::PlantModel& model, const Vec& q, const Vec& qd, const ReferencePoint& ref) {
  return model.inertia(q) * ref.qdd + model.coriolis(q, qd) * ref.qd + model.gravity(q);
}

Vec pd_torque(const Vec& e, const Vec& edot, const Gains& gains) {
  return -gains.kp * e - gains.kd * edot;
}

ControlTerms control_terms(const Controller& controller, const plant::PlantModel& model,
                           const Vec& q, const Vec& qd, const ReferencePoint& ref,
                           const Vec& feedforward, double u_max) {
  ControlTerms t;
  t.ctc = ctc_torque(model, q, qd, ref);
  t.pd = pd_torque(q - ref.q, qd - ref.qd, controller.gains);
  t.feedforward = controller.kind == ControllerKind::GP ? feedforward : Vec(Vec::Zero(q.size()));
  t.unclamped = t.ctc + t.pd + t.feedforward;
  t.total = t.unclamped.cwiseMax(-u_max).cwiseMin(u_max);
  return t;
}

Vec control_torque(const Controller& controller, const plant::PlantModel& model, const Vec& q,
                   const Vec& qd, const ReferencePoint& ref,
                   const Eigen::Ref<const Eigen::VectorXd>& x, double u_max) {
  Vec ff = Vec::Zero(q.size());
  if (controller.kind == ControllerKind::GP && controller.predictor != nullptr)
    ff = controller.predictor->predict(x);
  return control_terms(controller, model, q, qd, ref, ff, u_max).total;
}

}  // namespace rehab::control
