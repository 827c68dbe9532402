#include <cmath>
#include <cstdlib>
#include <fstream>

#include "rehab/harness.hpp"

namespace rehab::harness {

namespace {

using nlohmann::json;

std::string_view plant_name(PlantKind kind) {
  return kind == PlantKind::CartesianStage ? "cartesian_stage" : "two_link_arm";
}

PlantKind parse_plant(const std::string& name) {
  if (name == "cartesian_stage") return PlantKind::CartesianStage;
  if (name == "two_link_arm") return PlantKind::TwoLinkArm;
  throw UsageError("unknown plant '" + name + "' (expected cartesian_stage|two_link_arm)");
}

template <typename T>
void read(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

json range_json(const human::Range& r) { return json::array({r.lo, r.hi}); }

void read_range(const json& j, const char* key, human::Range& r) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw UsageError(std::string("range '") + key + "' must be [lo, hi]");
  r.lo = v[0].get<double>();
  r.hi = v[1].get<double>();
  if (!(r.lo <= r.hi)) throw UsageError(std::string("range '") + key + "' has lo > hi");
}

human::PatientParams default_surrogate() {
  human::PatientParams p;
  p.stiffness = Vec::Constant(2, 60.0);
  p.damping = Vec::Constant(2, 1.0);
  p.proficiency = 0.9;
  p.perception_gain = 0.15;
  p.fatigue_timescale = 300.0;
  p.tremor_amplitude = 0.1;
  p.seed = 7;
  return p;
}

}  // namespace

std::unique_ptr<plant::PlantModel> make_plant(const PlantConfig& config) {
  if (config.kind == PlantKind::CartesianStage)
    return std::make_unique<plant::CartesianStage>(config.stage_mass_x, config.stage_mass_y,
                                                   config.workspace_limit);
  return std::make_unique<plant::TwoLinkArm>(config.arm);
}

ExperimentConfig::ExperimentConfig() {
  for (auto kind : {ControllerKind::LowGain, ControllerKind::HighGain, ControllerKind::GP,
                    ControllerKind::TunedPD})
    gains[kind] = control::default_gains(kind);
  cohort.surrogate = default_surrogate();
  gp.rprop.max_log_deviation = 1.0;
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw UsageError("unsupported config schema_version " + std::to_string(schema_version));
  if (!(device_rate_hz > 0.0 && gp.rate_hz > 0.0)) throw UsageError("rates must be positive");
  const double ratio = device_rate_hz / gp.rate_hz;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1.0)
    throw UsageError("the GP rate must divide the device rate");
  if (periods < 1) throw UsageError("a trial needs at least one reference period");
  if (!(u_max > 0.0)) throw UsageError("u_max must be positive");
  if (gp.max_leaf_size < 2) throw UsageError("max_leaf_size must be at least 2");
  if (!(gp.predict_ahead >= 0.0 && gp.predict_ahead <= 1.0))
    throw UsageError("predict_ahead must lie in [0, 1]");
  if (!(gp.overlap_ratio >= 0.0)) throw UsageError("overlap_ratio must be nonnegative");
  if (!(gp.sigma_f > 0.0 && gp.sigma_on >= 0.0)) throw UsageError("invalid initial GP hyperparameters");
  if (!(gp.range_q > 0.0 && gp.range_qd > 0.0 && gp.range_qdd > 0.0 && gp.range_t > 0.0))
    throw UsageError("GP input ranges must be positive");
  if (cohort.size < 1) throw UsageError("cohort size must be at least 1");
  if (training_runs < 0 || test_runs < 1) throw UsageError("invalid run counts");
  if (noise.sigma_q < 0.0 || noise.sigma_qd < 0.0) throw UsageError("noise levels must be nonnegative");
  for (const auto& [kind, g] : gains) g.validate();
  cohort.surrogate.validate();
  control::RoundedRectangle check(reference);
  (void)check;
}

int ExperimentConfig::steps_per_tick() const {
  return static_cast<int>(std::lround(device_rate_hz / gp.rate_hz));
}

int ExperimentConfig::tick_count() const {
  return static_cast<int>(std::lround(trial_length() * gp.rate_hz));
}

control::Gains ExperimentConfig::gains_for(ControllerKind kind) const {
  auto it = gains.find(kind);
  return it == gains.end() ? control::default_gains(kind) : it->second;
}

json to_json(const ExperimentConfig& c) {
  json gains = json::object();
  for (const auto& [kind, g] : c.gains) gains[std::string(control::to_string(kind))] = {{"kp", g.kp}, {"kd", g.kd}};
  const auto& r = c.cohort.ranges;
  return {
      {"schema_version", c.schema_version},
      {"plant",
       {{"kind", plant_name(c.plant.kind)},
        {"stage_mass_x", c.plant.stage_mass_x},
        {"stage_mass_y", c.plant.stage_mass_y},
        {"workspace_limit", c.plant.workspace_limit},
        {"arm",
         {{"mass1", c.plant.arm.mass1},
          {"mass2", c.plant.arm.mass2},
          {"length1", c.plant.arm.length1},
          {"length2", c.plant.arm.length2},
          {"gravity", c.plant.arm.gravity},
          {"origin_x", c.plant.arm.origin_x},
          {"origin_y", c.plant.arm.origin_y},
          {"limit", c.plant.arm.limit}}}}},
      {"gains", gains},
      {"u_max", c.u_max},
      {"gp",
       {{"max_leaf_size", c.gp.max_leaf_size},
        {"overlap_ratio", c.gp.overlap_ratio},
        {"adapt", c.gp.adapt},
        {"adapt_noise", c.gp.adapt_noise},
        {"rprop",
         {{"initial_step", c.gp.rprop.initial_step},
          {"increase", c.gp.rprop.increase},
          {"decrease", c.gp.rprop.decrease},
          {"min_step", c.gp.rprop.min_step},
          {"max_step", c.gp.rprop.max_step},
          {"max_log_deviation", c.gp.rprop.max_log_deviation}}},
        {"sigma_f", c.gp.sigma_f},
        {"sigma_on", c.gp.sigma_on},
        {"range_q", c.gp.range_q},
        {"range_qd", c.gp.range_qd},
        {"range_qdd", c.gp.range_qdd},
        {"range_t", c.gp.range_t},
        {"rate_hz", c.gp.rate_hz},
        {"predict_ahead", c.gp.predict_ahead},
        {"parallel_dims", c.gp.parallel_dims}}},
      {"device_rate_hz", c.device_rate_hz},
      {"reference",
       {{"half_extent_x", c.reference.half_extent_x},
        {"half_extent_y", c.reference.half_extent_y},
        {"corner_radius", c.reference.corner_radius},
        {"period", c.reference.period}}},
      {"periods", c.periods},
      {"cohort",
       {{"size", c.cohort.size},
        {"master_seed", c.cohort.master_seed},
        {"ranges",
         {{"stiffness", range_json(r.stiffness)},
          {"damping", range_json(r.damping)},
          {"proficiency", range_json(r.proficiency)},
          {"perception_gain", range_json(r.perception_gain)},
          {"fatigue_timescale", range_json(r.fatigue_timescale)},
          {"tremor_amplitude", range_json(r.tremor_amplitude)}}},
        {"file", c.cohort.file},
        {"surrogate", human::to_json(c.cohort.surrogate)}}},
      {"noise", {{"enabled", c.noise.enabled}, {"sigma_q", c.noise.sigma_q}, {"sigma_qd", c.noise.sigma_qd}}},
      {"start_at_rest", c.start_at_rest},
      {"persist_gp_within_patient", c.persist_gp_within_patient},
      {"training_runs", c.training_runs},
      {"test_runs", c.test_runs},
      {"output_dir", c.output_dir},
      {"write_run_csv", c.write_run_csv},
  };
}

ExperimentConfig config_from_json(const json& doc) {
  const json& j = doc.contains("config") && doc.at("config").is_object() ? doc.at("config") : doc;
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  ExperimentConfig c;
  try {
    read(j, "schema_version", c.schema_version);
    if (c.schema_version != kConfigSchemaVersion)
      throw UsageError("unsupported config schema_version " + std::to_string(c.schema_version));
    if (j.contains("plant")) {
      const auto& p = j.at("plant");
      if (p.contains("kind")) c.plant.kind = parse_plant(p.at("kind").get<std::string>());
      read(p, "stage_mass_x", c.plant.stage_mass_x);
      read(p, "stage_mass_y", c.plant.stage_mass_y);
      read(p, "workspace_limit", c.plant.workspace_limit);
      if (p.contains("arm")) {
        const auto& a = p.at("arm");
        read(a, "mass1", c.plant.arm.mass1);
        read(a, "mass2", c.plant.arm.mass2);
        read(a, "length1", c.plant.arm.length1);
        read(a, "length2", c.plant.arm.length2);
        read(a, "gravity", c.plant.arm.gravity);
        read(a, "origin_x", c.plant.arm.origin_x);
        read(a, "origin_y", c.plant.arm.origin_y);
        read(a, "limit", c.plant.arm.limit);
      }
    }
    if (j.contains("gains")) {
      for (const auto& [name, g] : j.at("gains").items()) {
        control::Gains gains;
        gains.kp = g.at("kp").get<double>();
        gains.kd = g.at("kd").get<double>();
        c.gains[control::parse_controller_kind(name)] = gains;
      }
    }
    read(j, "u_max", c.u_max);
    if (j.contains("gp")) {
      const auto& g = j.at("gp");
      read(g, "max_leaf_size", c.gp.max_leaf_size);
      read(g, "overlap_ratio", c.gp.overlap_ratio);
      read(g, "adapt", c.gp.adapt);
      read(g, "adapt_noise", c.gp.adapt_noise);
      if (g.contains("rprop")) {
        const auto& r = g.at("rprop");
        read(r, "initial_step", c.gp.rprop.initial_step);
        read(r, "increase", c.gp.rprop.increase);
        read(r, "decrease", c.gp.rprop.decrease);
        read(r, "min_step", c.gp.rprop.min_step);
        read(r, "max_step", c.gp.rprop.max_step);
        read(r, "max_log_deviation", c.gp.rprop.max_log_deviation);
      }
      read(g, "sigma_f", c.gp.sigma_f);
      read(g, "sigma_on", c.gp.sigma_on);
      read(g, "range_q", c.gp.range_q);
      read(g, "range_qd", c.gp.range_qd);
      read(g, "range_qdd", c.gp.range_qdd);
      read(g, "range_t", c.gp.range_t);
      read(g, "rate_hz", c.gp.rate_hz);
      read(g, "predict_ahead", c.gp.predict_ahead);
      read(g, "parallel_dims", c.gp.parallel_dims);
    }
    read(j, "device_rate_hz", c.device_rate_hz);
    if (j.contains("reference")) {
      const auto& r = j.at("reference");
      read(r, "half_extent_x", c.reference.half_extent_x);
      read(r, "half_extent_y", c.reference.half_extent_y);
      read(r, "corner_radius", c.reference.corner_radius);
      read(r, "period", c.reference.period);
    }
    read(j, "periods", c.periods);
    if (j.contains("cohort")) {
      const auto& h = j.at("cohort");
      read(h, "size", c.cohort.size);
      read(h, "master_seed", c.cohort.master_seed);
      if (h.contains("ranges")) {
        const auto& r = h.at("ranges");
        read_range(r, "stiffness", c.cohort.ranges.stiffness);
        read_range(r, "damping", c.cohort.ranges.damping);
        read_range(r, "proficiency", c.cohort.ranges.proficiency);
        read_range(r, "perception_gain", c.cohort.ranges.perception_gain);
        read_range(r, "fatigue_timescale", c.cohort.ranges.fatigue_timescale);
        read_range(r, "tremor_amplitude", c.cohort.ranges.tremor_amplitude);
      }
      read(h, "file", c.cohort.file);
      if (h.contains("surrogate")) c.cohort.surrogate = human::patient_from_json(h.at("surrogate"));
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      read(n, "enabled", c.noise.enabled);
      read(n, "sigma_q", c.noise.sigma_q);
      read(n, "sigma_qd", c.noise.sigma_qd);
    }
    read(j, "start_at_rest", c.start_at_rest);
    read(j, "persist_gp_within_patient", c.persist_gp_within_patient);
    read(j, "training_runs", c.training_runs);
    read(j, "test_runs", c.test_runs);
    read(j, "output_dir", c.output_dir);
    read(j, "write_run_csv", c.write_run_csv);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {
void apply_env(ExperimentConfig& c) {
  if (const char* dir = std::getenv(kOutputDirEnv); dir != nullptr && *dir != '\0') c.output_dir = dir;
}
}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig c = config_from_json(read_json(path));
  apply_env(c);
  return c;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  apply_env(c);
  return c;
}

loggp::TreeSettings tree_settings(const ExperimentConfig& c, int dof, std::uint64_t seed) {
  loggp::TreeSettings s;
  s.max_leaf_size = c.gp.max_leaf_size;
  s.overlap_ratio = c.gp.overlap_ratio;
  s.adapt_hyper = c.gp.adapt;
  s.rprop = c.gp.rprop;
  const int rho = 3 * dof + 1;
  Eigen::VectorXd ls(rho);
  ls.segment(0, dof).setConstant(0.5 * c.gp.range_q);
  ls.segment(dof, dof).setConstant(0.5 * c.gp.range_qd);
  ls.segment(2 * dof, dof).setConstant(0.5 * c.gp.range_qdd);
  ls[rho - 1] = 0.5 * c.gp.range_t;
  s.initial_hyper = gp::Hyperparameters(c.gp.sigma_f, ls, c.gp.sigma_on);
  s.adapt_mask.assign(static_cast<std::size_t>(rho + 2), true);
  if (!c.gp.adapt_noise || c.gp.sigma_on == 0.0) s.adapt_mask.back() = false;
  s.seed = seed;
  return s;
}

loggp::VectorPredictor make_predictor(const ExperimentConfig& c, int dof, std::uint64_t seed) {
  loggp::VectorPredictor vp(3 * dof + 1, dof, tree_settings(c, dof, seed));
  vp.set_parallel(c.gp.parallel_dims);
  return vp;
}

std::vector<human::PatientParams> load_cohort(const ExperimentConfig& c) {
  const int dof = make_plant(c.plant)->dof();
  std::vector<human::PatientParams> cohort;
  if (!c.cohort.file.empty())
    cohort = human::cohort_from_json(read_json(c.cohort.file));
  else
    cohort = human::sample_cohort(c.cohort.size, c.cohort.master_seed, dof, c.cohort.ranges);
  for (const auto& p : cohort)
    if (p.dof() != dof) throw UsageError("cohort patient dimension does not match the plant");
  return cohort;
}

}  // namespace rehab::harness
