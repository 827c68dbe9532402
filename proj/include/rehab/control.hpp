#pragma once

#include <string>
#include <string_view>

#include "rehab/loggp.hpp"
#include "rehab/plant.hpp"

namespace rehab::control {

using plant::Mat;
using plant::MotionPoint;
using plant::Vec;

/// Reference position, velocity and acceleration at one instant.
using ReferencePoint = MotionPoint;

struct ReferenceConfig {
  double half_extent_x = 0.15;  // [m]
  double half_extent_y = 0.10;  // [m]
  double corner_radius = 0.05;  // [m]
  double period = 10.0;         // [s]
};

/// Rounded rectangle centred on the task origin, traversed counter-clockwise
/// at constant path speed starting from the midpoint of the right edge.
class RoundedRectangle {
 public:
  explicit RoundedRectangle(const ReferenceConfig& config = {});

  ReferencePoint at(double t) const;
  double perimeter() const { return perimeter_; }
  double speed() const { return speed_; }
  const ReferenceConfig& config() const { return config_; }

 private:
  struct Segment {
    bool arc = false;
    double start = 0.0;  // arc length at segment start
    double length = 0.0;
    double px = 0.0, py = 0.0;  // line start, or arc centre
    double dx = 0.0, dy = 0.0;  // line direction
    double angle0 = 0.0;        // arc start angle
  };

  ReferenceConfig config_;
  std::vector<Segment> segments_;
  double perimeter_ = 0.0;
  double speed_ = 0.0;
};

/// Task-space reference at time t.
ReferencePoint reference(double t, const ReferenceConfig& config = {});

enum class ControllerKind { LowGain, HighGain, GP, TunedPD };

std::string_view to_string(ControllerKind kind);
/// Accepts "low", "high", "gp", "tuned".
ControllerKind parse_controller_kind(std::string_view name);

/// Diagonal PD gains K_p = kp I, K_d = kd I.
struct Gains {
  double kp = 1.0;
  double kd = 0.1;
  void validate() const;
};

/// Fixed gains of each controller variant.
Gains default_gains(ControllerKind kind);

struct Controller {
  ControllerKind kind = ControllerKind::LowGain;
  Gains gains;
  const loggp::VectorPredictor* predictor = nullptr;  ///< GP variant only
};

/// Validates gains and that exactly the GP variant carries a predictor.
Controller make_controller(ControllerKind kind, Gains gains,
                           const loggp::VectorPredictor* predictor = nullptr);

/// H(q) qdd_ref + C(q, qd) qd_ref + g(q).
Vec ctc_torque(const plant::PlantModel& model, const Vec& q, const Vec& qd, const ReferencePoint& ref);

/// -K_p e - K_d edot.
Vec pd_torque(const Vec& e, const Vec& edot, const Gains& gains);

struct ControlTerms {
  Vec ctc;
  Vec pd;
  Vec feedforward;
  Vec unclamped;
  Vec total;  ///< unclamped limited to +-u_max per axis
};

/// Control law with an externally supplied (e.g. zero-order held) learned
/// feedforward term; the feedforward is ignored unless the controller is the
/// GP variant.
ControlTerms control_terms(const Controller& controller, const plant::PlantModel& model,
                           const Vec& q, const Vec& qd, const ReferencePoint& ref,
                           const Vec& feedforward, double u_max);

/// Control law evaluating the learned feedforward at x on the spot.
Vec control_torque(const Controller& controller, const plant::PlantModel& model, const Vec& q,
                   const Vec& qd, const ReferencePoint& ref,
                   const Eigen::Ref<const Eigen::VectorXd>& x, double u_max);

}  // namespace rehab::control
