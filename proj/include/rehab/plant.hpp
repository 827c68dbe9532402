#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>

#include <Eigen/Core>

#include "rehab/errors.hpp"

namespace rehab::plant {

inline constexpr int kMaxDof = 6;

/// Small fixed-capacity vectors and matrices: no heap traffic in the 4 kHz loop.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDof, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDof, kMaxDof>;

/// Position, velocity and acceleration of a trajectory at one instant.
struct MotionPoint {
  Vec q;
  Vec qd;
  Vec qdd;
};

/// Euler-Lagrange model H(q) qdd + C(q, qd) qd + g(q) = torque.
///
/// Besides the dynamics, a plant exposes a task space in which the patient
/// acts, the workspace limit is enforced and tracking error is measured.
class PlantModel {
 public:
  virtual ~PlantModel() = default;

  virtual int dof() const = 0;
  virtual Mat inertia(const Vec& q) const = 0;
  virtual Mat coriolis(const Vec& q, const Vec& qd) const = 0;
  virtual Vec gravity(const Vec& q) const = 0;

  /// Task-space position relative to the task origin.
  virtual Vec task_position(const Vec& q) const = 0;
  virtual Mat task_jacobian(const Vec& q) const = 0;
  /// Joint-space motion reproducing a task-space motion (inverse kinematics).
  virtual MotionPoint joint_motion(const MotionPoint& task) const = 0;

  /// Symmetric bound on every task-space coordinate.
  virtual double workspace_limit() const = 0;

  bool within_workspace(const Vec& q) const;
};

/// Two orthogonal linear stages in the horizontal plane: H = diag(m), C = 0, g = 0.
class CartesianStage final : public PlantModel {
 public:
  explicit CartesianStage(double mass_x = 6.0, double mass_y = 4.0, double limit = 0.20);

  int dof() const override { return 2; }
  Mat inertia(const Vec& q) const override;
  Mat coriolis(const Vec& q, const Vec& qd) const override;
  Vec gravity(const Vec& q) const override;
  Vec task_position(const Vec& q) const override { return q; }
  Mat task_jacobian(const Vec& q) const override;
  MotionPoint joint_motion(const MotionPoint& task) const override { return task; }
  double workspace_limit() const override { return limit_; }

  const Vec& masses() const { return masses_; }

 private:
  Vec masses_;
  double limit_;
};

struct TwoLinkParams {
  double mass1 = 2.0;
  double mass2 = 1.5;
  double length1 = 0.4;
  double length2 = 0.3;
  double gravity = 9.81;
  /// Task-space origin (centre of the exercise) in the base frame.
  double origin_x = 0.35;
  double origin_y = 0.15;
  double limit = 0.20;
};

/// Planar revolute arm in a vertical plane, uniform rod links, gravity along -y.
class TwoLinkArm final : public PlantModel {
 public:
  explicit TwoLinkArm(TwoLinkParams params = {});

  int dof() const override { return 2; }
  Mat inertia(const Vec& q) const override;
  Mat coriolis(const Vec& q, const Vec& qd) const override;
  Vec gravity(const Vec& q) const override;
  Vec task_position(const Vec& q) const override;
  Mat task_jacobian(const Vec& q) const override;
  MotionPoint joint_motion(const MotionPoint& task) const override;
  double workspace_limit() const override { return p_.limit; }

  const TwoLinkParams& params() const { return p_; }
  double kinetic_energy(const Vec& q, const Vec& qd) const;

 private:
  TwoLinkParams p_;
};

struct PlantState {
  Vec q;
  Vec qd;
  double t = 0.0;
};

/// Torque exerted by the environment (the patient) on the plant: f(q, qd, t).
using TorqueField = std::function<Vec(const Vec& q, const Vec& qd, double t)>;

/// Solves H qdd = u - C qd - g - f.
Vec forward_accel(const PlantModel& model, const Vec& q, const Vec& qd, const Vec& u, const Vec& f);

/// H qdd + C qd + g.
Vec inverse_dynamics(const PlantModel& model, const Vec& q, const Vec& qd, const Vec& qdd);

/// One classical Runge-Kutta step with u held constant and the field
/// evaluated at every stage. Throws NumericError on a non-finite result.
PlantState step(const PlantModel& model, const PlantState& state, const Vec& u,
                const TorqueField& field, double dt);

/// Learning input x = (q, qd, qdd, t), dimension 3d + 1.
Eigen::VectorXd pack_input(const Vec& q, const Vec& qd, const Vec& qdd, double t);

struct UnpackedInput {
  Vec q;
  Vec qd;
  Vec qdd;
  double t = 0.0;
};
UnpackedInput unpack_input(const Eigen::Ref<const Eigen::VectorXd>& x, int dof);

struct TrainingPair {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// y = u - inverse_dynamics(q, qd, qdd) with (q, qd, qdd) taken from x.
TrainingPair residual_sample(const Vec& u, const Eigen::Ref<const Eigen::VectorXd>& x,
                             const PlantModel& model);

/// Measurement emulation at the learning rate: Gaussian noise on q and qd,
/// acceleration by differencing the noisy velocity.
///
/// Central differences need the next sample, so the training measurement
/// lags one tick behind; a backward difference is available immediately.
class DifferentiatingSensor {
 public:
  DifferentiatingSensor(double sigma_q, double sigma_qd, double period, std::uint64_t seed);

  struct Measurement {
    Vec q;
    Vec qd;
    Vec qdd;
    double t = 0.0;
  };

  struct Reading {
    Measurement current;                 ///< backward-difference acceleration, time t
    std::optional<Measurement> central;  ///< central-difference acceleration, time t - period
  };

  Reading observe(const Vec& q, const Vec& qd, double t);

 private:
  double sigma_q_;
  double sigma_qd_;
  double period_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::optional<Measurement> prev_;
  std::optional<Measurement> prev2_;
};

}  // namespace rehab::plant
