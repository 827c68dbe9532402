#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rehab/plant.hpp"

namespace rehab::human {

using plant::Vec;

/// Synthetic patient: an impedance pulling the handle toward a distorted
/// perception of the reference, fading with fatigue, plus tremor.
struct PatientParams {
  Vec stiffness;  ///< diagonal of K_h [N/m]
  Vec damping;    ///< diagonal of D_h [N s/m]
  double proficiency = 1.0;          ///< in [0, 1]; 1 sees the reference undistorted
  double perception_gain = 0.0;      ///< radial distortion strength
  double fatigue_timescale = 600.0;  ///< [s]
  double tremor_amplitude = 0.0;     ///< bound on the tremor force norm [N]
  std::uint64_t seed = 0;

  int dof() const { return static_cast<int>(stiffness.size()); }
  void validate() const;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct CohortRanges {
  Range stiffness{20.0, 200.0};
  Range damping{1.0, 20.0};
  Range proficiency{0.2, 0.95};
  Range perception_gain{0.1, 0.4};
  Range fatigue_timescale{60.0, 600.0};
  Range tremor_amplitude{0.0, 0.5};
};

/// Point the patient aims at: same angle from the origin as the reference,
/// radius scaled by 1 + (1 - proficiency) * perception_gain.
Vec perceived_target(const PatientParams& p, const Vec& reference);

/// Fatigue factor exp(-t / T_f).
double fatigue(const PatientParams& p, double t);

/// Seeded sum of sinusoids in the 4-12 Hz band, |tremor| <= tremor_amplitude.
Vec tremor(const PatientParams& p, double t);

/// Interaction torque f as it enters H qdd + C qd + g + f = u, in the
/// coordinates of (q, qd, reference). The patient pushes the handle with
/// -f = fatigue(t) [K_h (q_perc - q) - D_h qd] + tremor(t).
Vec patient_torque(const PatientParams& p, const Vec& q, const Vec& qd, double t,
                   const Vec& reference);

/// Same, reading (q, qd, t) from a learning input x = (q, qd, qdd, t).
Vec patient_torque(const PatientParams& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Vec& reference);

std::vector<PatientParams> sample_cohort(int n, std::uint64_t master_seed, int dof = 2,
                                         const CohortRanges& ranges = {});

nlohmann::json to_json(const PatientParams& p);
PatientParams patient_from_json(const nlohmann::json& j);
nlohmann::json cohort_to_json(const std::vector<PatientParams>& cohort);
std::vector<PatientParams> cohort_from_json(const nlohmann::json& j);

}  // namespace rehab::human
