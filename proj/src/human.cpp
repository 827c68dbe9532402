#include "rehab/human.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "rehab/loggp.hpp"

namespace rehab::human {

namespace {

constexpr int kTremorComponents = 3;
constexpr double kTremorLowHz = 4.0;
constexpr double kTremorHighHz = 12.0;

double unit_from_bits(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

double draw(std::mt19937_64& rng, const Range& r) { return r.lo + (r.hi - r.lo) * unit_from_bits(rng()); }

Vec json_vec(const nlohmann::json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

nlohmann::json vec_json(const Vec& v) {
  auto j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

}  // namespace

void PatientParams::validate() const {
  if (stiffness.size() == 0 || stiffness.size() != damping.size())
    throw UsageError("patient stiffness and damping must be nonempty and equally sized");
  if ((stiffness.array() < 0.0).any() || (damping.array() < 0.0).any())
    throw UsageError("patient stiffness and damping must be nonnegative");
  if (!(proficiency >= 0.0 && proficiency <= 1.0)) throw UsageError("proficiency must lie in [0, 1]");
  if (!(fatigue_timescale > 0.0)) throw UsageError("fatigue timescale must be positive");
  if (!(tremor_amplitude >= 0.0)) throw UsageError("tremor amplitude must be nonnegative");
  if (!std::isfinite(perception_gain)) throw UsageError("perception gain must be finite");
}

Vec perceived_target(const PatientParams& p, const Vec& reference) {
  return reference * (1.0 + (1.0 - p.proficiency) * p.perception_gain);
}

double fatigue(const PatientParams& p, double t) { return std::exp(-t / p.fatigue_timescale); }

Vec tremor(const PatientParams& p, double t) {
  const int d = p.dof();
  Vec out = Vec::Zero(d);
  if (p.tremor_amplitude == 0.0) return out;
  const double per_axis = p.tremor_amplitude / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i) {
    double sum = 0.0;
    for (int k = 0; k < kTremorComponents; ++k) {
      const auto stream = static_cast<std::uint64_t>(i * kTremorComponents + k);
      const double hz = kTremorLowHz + (kTremorHighHz - kTremorLowHz) *
                                           unit_from_bits(loggp::derive_seed(p.seed, 2 * stream));
      const double phase =
          2.0 * std::numbers::pi * unit_from_bits(loggp::derive_seed(p.seed, 2 * stream + 1));
      sum += std::sin(2.0 * std::numbers::pi * hz * t + phase);
    }
    out[i] = per_axis * sum / kTremorComponents;
  }
  return out;
}

Vec patient_torque(const PatientParams& p, const Vec& q, const Vec& qd, double t,
                   const Vec& reference) {
  const Vec target = perceived_target(p, reference);
  const Vec pull = p.stiffness.cwiseProduct(q - target) + p.damping.cwiseProduct(qd);
  return fatigue(p, t) * pull - tremor(p, t);
}

Vec patient_torque(const PatientParams& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Vec& reference) {
  const auto in = plant::unpack_input(x, p.dof());
  return patient_torque(p, in.q, in.qd, in.t, reference);
}

std::vector<PatientParams> sample_cohort(int n, std::uint64_t master_seed, int dof,
                                         const CohortRanges& ranges) {
  if (n < 1) throw UsageError("cohort size must be at least 1");
  if (dof < 1 || dof > plant::kMaxDof) throw UsageError("unsupported degrees of freedom");
  std::mt19937_64 rng(master_seed);
  std::vector<PatientParams> cohort;
  cohort.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PatientParams p;
    p.stiffness.resize(dof);
    p.damping.resize(dof);
    for (int j = 0; j < dof; ++j) p.stiffness[j] = draw(rng, ranges.stiffness);
    for (int j = 0; j < dof; ++j) p.damping[j] = draw(rng, ranges.damping);
    p.proficiency = draw(rng, ranges.proficiency);
    p.perception_gain = draw(rng, ranges.perception_gain);
    p.fatigue_timescale = draw(rng, ranges.fatigue_timescale);
    p.tremor_amplitude = draw(rng, ranges.tremor_amplitude);
    p.seed = loggp::derive_seed(master_seed, 1000u + static_cast<std::uint64_t>(i));
    cohort.push_back(std::move(p));
  }
  return cohort;
}

nlohmann::json to_json(const PatientParams& p) {
  return {{"stiffness", vec_json(p.stiffness)},
          {"damping", vec_json(p.damping)},
          {"proficiency", p.proficiency},
          {"perception_gain", p.perception_gain},
          {"fatigue_timescale", p.fatigue_timescale},
          {"tremor_amplitude", p.tremor_amplitude},
          {"seed", p.seed}};
}

PatientParams patient_from_json(const nlohmann::json& j) {
  PatientParams p;
  try {
    p.stiffness = json_vec(j.at("stiffness"));
    p.damping = json_vec(j.at("damping"));
    p.proficiency = j.at("proficiency").get<double>();
    p.perception_gain = j.at("perception_gain").get<double>();
    p.fatigue_timescale = j.at("fatigue_timescale").get<double>();
    p.tremor_amplitude = j.at("tremor_amplitude").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid patient record: ") + e.what());
  }
  p.validate();
  return p;
}

nlohmann::json cohort_to_json(const std::vector<PatientParams>& cohort) {
  auto patients = nlohmann::json::array();
  for (const auto& p : cohort) patients.push_back(to_json(p));
  return {{"schema_version", 1}, {"patients", patients}};
}

std::vector<PatientParams> cohort_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema_version", 0) != 1 || !j.contains("patients"))
    throw UsageError("cohort file must be a schema_version 1 object with a patients list");
  std::vector<PatientParams> cohort;
  for (const auto& p : j.at("patients")) cohort.push_back(patient_from_json(p));
  if (cohort.empty()) throw UsageError("cohort file lists no patients");
  return cohort;
}

}  // namespace rehab::human
