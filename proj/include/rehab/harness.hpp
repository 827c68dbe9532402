#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "rehab/control.hpp"
#include "rehab/human.hpp"
#include "rehab/loggp.hpp"
#include "rehab/plant.hpp"

namespace rehab::harness {

using control::ControllerKind;
using plant::Vec;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kSummarySchemaVersion = 1;
/// Environment variable that overrides ExperimentConfig::output_dir.
inline constexpr const char* kOutputDirEnv = "REHAB_OUTPUT_DIR";

enum class PlantKind { CartesianStage, TwoLinkArm };

struct PlantConfig {
  PlantKind kind = PlantKind::CartesianStage;
  double stage_mass_x = 6.0;  // [kg]
  double stage_mass_y = 4.0;  // [kg]
  double workspace_limit = 0.20;  // [m], stage only; the arm uses arm.limit
  plant::TwoLinkParams arm;
};

std::unique_ptr<plant::PlantModel> make_plant(const PlantConfig& config);

struct GpConfig {
  int max_leaf_size = 100;
  double overlap_ratio = 0.1;
  bool adapt = true;
  bool adapt_noise = true;  ///< false freezes sigma_on
  loggp::RpropSettings rprop;  ///< max_log_deviation defaults to 1 here
  double sigma_f = 1.0;
  double sigma_on = 0.03;
  /// Expected extent of each input block; initial lengthscale = half of it.
  double range_q = 0.4;
  double range_qd = 3.0;
  /// Large on purpose: y = u - H qdd makes qdd a spurious explanatory input.
  double range_qdd = 1000.0;
  double range_t = 50.0;
  double rate_hz = 200.0;
  /// The held prediction is evaluated at the state extrapolated this
  /// fraction of a tick ahead (0.5: middle of the hold interval).
  double predict_ahead = 0.5;
  bool parallel_dims = false;
};

struct NoiseConfig {
  bool enabled = false;
  double sigma_q = 1e-5;   // [m]
  double sigma_qd = 1e-3;  // [m/s]
};

struct CohortConfig {
  int size = 9;
  std::uint64_t master_seed = 20210421;
  human::CohortRanges ranges;
  /// Optional cohort JSON; when set it replaces sampling.
  std::string file;
  /// Individual the tuned PD gains were chosen for.
  human::PatientParams surrogate;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  PlantConfig plant;
  std::map<ControllerKind, control::Gains> gains;
  double u_max = 40.0;  // [N] per axis
  GpConfig gp;
  double device_rate_hz = 4000.0;
  control::ReferenceConfig reference;
  int periods = 5;
  CohortConfig cohort;
  NoiseConfig noise;
  bool start_at_rest = false;  ///< false: start on the reference with its velocity
  bool persist_gp_within_patient = true;
  int training_runs = 1;
  int test_runs = 4;
  std::string output_dir = "rehab_out";
  bool write_run_csv = false;

  ExperimentConfig();

  void validate() const;
  int steps_per_tick() const;
  double tick_period() const { return 1.0 / gp.rate_hz; }
  double device_period() const { return 1.0 / device_rate_hz; }
  double trial_length() const { return periods * reference.period; }
  int tick_count() const;
  control::Gains gains_for(ControllerKind kind) const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing fields keep their defaults. A document carrying a "config" member
/// (a study summary) is read from that member.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Reads a JSON config file and applies the output-directory override.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Default configuration with the output-directory override applied.
ExperimentConfig default_config();

loggp::TreeSettings tree_settings(const ExperimentConfig& config, int dof, std::uint64_t seed);
loggp::VectorPredictor make_predictor(const ExperimentConfig& config, int dof, std::uint64_t seed);

std::vector<human::PatientParams> load_cohort(const ExperimentConfig& config);

/// One record per learning tick.
struct TickRecord {
  double t = 0.0;
  Vec q, qd, qdd, q_ref;
  Vec u, u_ctc, u_pd, u_ff;  ///< torque applied just before the tick, by term
  Vec y;                     ///< residual target handed to the learner
  Vec mu;                    ///< feedforward predicted at this tick, held until the next
  double task_error = 0.0;   ///< |p - p_ref| in task space [m]
  double joint_error = 0.0;  ///< |q - q_ref|
  double update_us = 0.0;
  double predict_us = 0.0;
};

struct RunLog {
  ControllerKind kind = ControllerKind::LowGain;
  std::uint64_t seed = 0;
  int dof = 2;
  std::vector<TickRecord> records;
  bool failed = false;
  double failure_time = std::numeric_limits<double>::quiet_NaN();
  std::string failure_reason;
  std::size_t gp_samples = 0;
  double max_abs_feedforward = 0.0;
  double max_abs_target = 0.0;
  double max_sigma_f = 0.0;
};

/// Runs one closed-loop trial. The GP variant learns into `predictor` when
/// given (so a model can persist across runs) and into a fresh one otherwise.
RunLog run_trial(const ExperimentConfig& config, ControllerKind kind,
                 const human::PatientParams& patient, std::uint64_t seed,
                 loggp::VectorPredictor* predictor = nullptr);

struct LatencyStats {
  double mean = 0.0;
  double p50 = 0.0;
  double p99 = 0.0;
  double max = 0.0;
  std::size_t over_budget = 0;
};

LatencyStats latency_stats(std::vector<double> samples_us, double budget_us);

struct SummaryMetrics {
  double sum_abs_error = 0.0;        // [m]
  double sum_abs_joint_error = 0.0;  // joint units
  double max_force_norm = 0.0;       // [N]
  bool failed = false;
  double failure_time = std::numeric_limits<double>::quiet_NaN();
  std::string failure_reason;
  std::size_t ticks = 0;
  LatencyStats update;
  LatencyStats predict;
  LatencyStats combined;
  double fraction_over_budget = 0.0;
};

SummaryMetrics summarize(const RunLog& log, double budget_us);

struct RunResult {
  int patient = 0;  ///< cohort index, -1 for the surrogate
  ControllerKind kind = ControllerKind::LowGain;
  bool training = false;
  int run = 0;
  std::uint64_t seed = 0;
  SummaryMetrics metrics;
  std::size_t gp_samples = 0;
};

struct VariantAggregate {
  std::size_t runs = 0;
  std::size_t failed = 0;
  std::size_t failed_training = 0;
  double mean_error = 0.0;
  double std_error = 0.0;
  double mean_force = 0.0;
  double std_force = 0.0;
  double intra_subject_std = 0.0;
  double inter_subject_std = 0.0;
  std::vector<double> subject_mean_error;  ///< NaN when every test run failed
};

struct StudyReport {
  ExperimentConfig config;
  std::vector<human::PatientParams> cohort;
  std::vector<RunResult> runs;
  std::vector<RunResult> surrogate_runs;
  std::map<ControllerKind, VariantAggregate> variants;
  std::map<ControllerKind, VariantAggregate> surrogate;
};

struct StudyOptions {
  bool write_files = true;
  std::function<void(const RunResult&)> on_run;
};

/// Training phase then test phase for every patient and variant, followed by
/// the tuned-PD vs GP comparison on the surrogate individual.
StudyReport run_study(const ExperimentConfig& config, const StudyOptions& options = {});

/// Aggregates over non-failed test-phase runs of one variant.
VariantAggregate aggregate(const std::vector<RunResult>& runs, ControllerKind kind, int subjects);

/// Deterministic study summary (no wall-clock quantities).
nlohmann::json summary_json(const StudyReport& report);
/// Latency percentiles per run; varies between executions.
nlohmann::json latency_json(const StudyReport& report);

struct BenchPoint {
  std::size_t n = 0;
  LatencyStats update;
  LatencyStats predict;
  LatencyStats combined;
  int max_depth = 0;
  std::size_t leaves = 0;
};

struct BenchReport {
  std::vector<BenchPoint> points;
  std::vector<double> growth_ratio;  ///< mean combined latency, point i+1 over point i
  std::size_t exact_n = 0;
  double exact_update_ms = 0.0;
  double exact_predict_ms = 0.0;
  /// Cubic extrapolation of exact_update_ms to N = 10^4.
  double exact_update_ms_at_1e4 = 0.0;
  double budget_ms = 5.0;
};

/// Streams synthetic data into a d = 2 predictor and times update and
/// predict over `window` ticks ending at each requested size.
BenchReport run_bench(const ExperimentConfig& config, std::vector<std::size_t> sizes,
                      std::size_t window = 500, std::size_t exact_n = 1000);
nlohmann::json bench_json(const BenchReport& report);

/// Per-tick CSV; column order documented in docs/csv_format.md.
std::string csv_header(int dof);
std::string run_csv(const RunLog& log);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);
/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace rehab::harness
