#include <cmath>
#include <optional>

#include "rehab/harness.hpp"

namespace rehab::harness {

namespace {

using nlohmann::json;

constexpr ControllerKind kVariants[] = {ControllerKind::LowGain, ControllerKind::HighGain,
                                        ControllerKind::GP, ControllerKind::TunedPD};
constexpr std::uint64_t kSurrogateStream = 999;

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation; zero below two samples.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json aggregate_json(const VariantAggregate& a) {
  auto subjects = json::array();
  for (double v : a.subject_mean_error) subjects.push_back(number_or_null(v));
  return {{"runs", a.runs},
          {"failed", a.failed},
          {"failed_training", a.failed_training},
          {"mean_sum_abs_error", a.mean_error},
          {"std_sum_abs_error", a.std_error},
          {"mean_max_force_norm", a.mean_force},
          {"std_max_force_norm", a.std_force},
          {"intra_subject_std", a.intra_subject_std},
          {"inter_subject_std", a.inter_subject_std},
          {"subject_mean_sum_abs_error", subjects}};
}

json run_json(const RunResult& r) {
  return {{"patient", r.patient},
          {"controller", control::to_string(r.kind)},
          {"phase", r.training ? "training" : "test"},
          {"run", r.run},
          {"seed", r.seed},
          {"sum_abs_error", r.metrics.sum_abs_error},
          {"sum_abs_joint_error", r.metrics.sum_abs_joint_error},
          {"max_force_norm", r.metrics.max_force_norm},
          {"failed", r.metrics.failed},
          {"failure_time", number_or_null(r.metrics.failure_time)},
          {"failure_reason", r.metrics.failure_reason},
          {"ticks", r.metrics.ticks},
          {"gp_samples", r.gp_samples}};
}

json latency_entry(const RunResult& r) {
  auto stats = [](const LatencyStats& s) {
    return json{{"mean_us", s.mean}, {"p50_us", s.p50}, {"p99_us", s.p99}, {"max_us", s.max},
                {"over_budget", s.over_budget}};
  };
  return {{"patient", r.patient},
          {"controller", control::to_string(r.kind)},
          {"phase", r.training ? "training" : "test"},
          {"run", r.run},
          {"update", stats(r.metrics.update)},
          {"predict", stats(r.metrics.predict)},
          {"combined", stats(r.metrics.combined)},
          {"fraction_over_budget", r.metrics.fraction_over_budget}};
}

std::string run_file_name(const RunResult& r) {
  const std::string who = r.patient < 0 ? "surrogate" : "p" + std::to_string(r.patient);
  return who + "_" + std::string(control::to_string(r.kind)) + "_" + (r.training ? "train" : "test") +
         std::to_string(r.run) + ".csv";
}

struct PatientRunner {
  const ExperimentConfig& config;
  const StudyOptions& options;
  std::filesystem::path out;

  void run(int index, std::uint64_t stream, const human::PatientParams& patient,
           const std::vector<ControllerKind>& kinds, std::vector<RunResult>& results) const {
    const double budget_us = 1e6 * config.tick_period();
    const int dof = patient.dof();
    const int total = config.training_runs + config.test_runs;
    for (ControllerKind kind : kinds) {
      std::optional<loggp::VectorPredictor> persistent;
      for (int k = 0; k < total; ++k) {
        const bool training = k < config.training_runs;
        const std::uint64_t seed =
            loggp::derive_seed(config.cohort.master_seed, stream * 100 + static_cast<std::uint64_t>(k));
        loggp::VectorPredictor* vp = nullptr;
        std::optional<loggp::VectorPredictor> fresh;
        if (kind == ControllerKind::GP) {
          if (!training && config.persist_gp_within_patient) {
            if (!persistent) persistent.emplace(make_predictor(config, dof, loggp::derive_seed(seed, 1)));
            vp = &*persistent;
          } else {
            fresh.emplace(make_predictor(config, dof, loggp::derive_seed(seed, 1)));
            vp = &*fresh;
          }
        }
        const RunLog log = run_trial(config, kind, patient, seed, vp);
        RunResult r;
        r.patient = index;
        r.kind = kind;
        r.training = training;
        r.run = training ? k : k - config.training_runs;
        r.seed = seed;
        r.metrics = summarize(log, budget_us);
        r.gp_samples = log.gp_samples;
        if (options.write_files && config.write_run_csv)
          write_text(out / "runs" / run_file_name(r), run_csv(log));
        if (options.on_run) options.on_run(r);
        results.push_back(r);
      }
    }
  }
};

}  // namespace

VariantAggregate aggregate(const std::vector<RunResult>& runs, ControllerKind kind, int subjects) {
  VariantAggregate a;
  std::vector<double> errors, forces;
  std::vector<std::vector<double>> per_subject(static_cast<std::size_t>(std::max(subjects, 0)));
  for (const auto& r : runs) {
    if (r.kind != kind) continue;
    if (r.training) {
      if (r.metrics.failed) ++a.failed_training;
      continue;
    }
    ++a.runs;
    if (r.metrics.failed) {
      ++a.failed;
      continue;
    }
    errors.push_back(r.metrics.sum_abs_error);
    forces.push_back(r.metrics.max_force_norm);
    const int s = r.patient < 0 ? 0 : r.patient;
    if (s < subjects) per_subject[static_cast<std::size_t>(s)].push_back(r.metrics.sum_abs_error);
  }
  a.mean_error = mean_of(errors);
  a.std_error = std_of(errors);
  a.mean_force = mean_of(forces);
  a.std_force = std_of(forces);

  std::vector<double> intra, means;
  for (const auto& v : per_subject) {
    if (v.empty()) {
      a.subject_mean_error.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    a.subject_mean_error.push_back(mean_of(v));
    means.push_back(mean_of(v));
    if (v.size() >= 2) intra.push_back(std_of(v));
  }
  a.intra_subject_std = mean_of(intra);
  a.inter_subject_std = std_of(means);
  return a;
}

json summary_json(const StudyReport& report) {
  json variants = json::object();
  for (const auto& [kind, a] : report.variants) variants[std::string(control::to_string(kind))] = aggregate_json(a);
  json surrogate = json::object();
  for (const auto& [kind, a] : report.surrogate)
    surrogate[std::string(control::to_string(kind))] = aggregate_json(a);
  auto runs = json::array();
  for (const auto& r : report.runs) runs.push_back(run_json(r));
  auto surrogate_runs = json::array();
  for (const auto& r : report.surrogate_runs) surrogate_runs.push_back(run_json(r));
  return {{"schema_version", kSummarySchemaVersion},
          {"config", to_json(report.config)},
          {"cohort", human::cohort_to_json(report.cohort)},
          {"variants", variants},
          {"surrogate", surrogate},
          {"runs", runs},
          {"surrogate_runs", surrogate_runs}};
}

json latency_json(const StudyReport& report) {
  auto runs = json::array();
  for (const auto& r : report.runs) runs.push_back(latency_entry(r));
  for (const auto& r : report.surrogate_runs) runs.push_back(latency_entry(r));
  return {{"schema_version", kSummarySchemaVersion}, {"budget_us", 1e6 * report.config.tick_period()},
          {"runs", runs}};
}

StudyReport run_study(const ExperimentConfig& config, const StudyOptions& options) {
  config.validate();
  StudyReport report;
  report.config = config;
  report.cohort = load_cohort(config);
  if (report.cohort.empty()) throw UsageError("cohort is empty");

  const std::filesystem::path out = config.output_dir;
  if (options.write_files) {
    std::filesystem::create_directories(out);
    write_json(out / "config.json", to_json(config));
    write_json(out / "cohort.json", human::cohort_to_json(report.cohort));
  }
  const PatientRunner runner{config, options, out};
  const int subjects = static_cast<int>(report.cohort.size());
  const std::vector<ControllerKind> all(std::begin(kVariants), std::end(kVariants));

  auto refresh = [&] {
    for (ControllerKind kind : kVariants) report.variants[kind] = aggregate(report.runs, kind, subjects);
    for (ControllerKind kind : {ControllerKind::GP, ControllerKind::TunedPD})
      report.surrogate[kind] = aggregate(report.surrogate_runs, kind, 1);
    if (options.write_files) write_json(out / "summary.json", summary_json(report));
  };

  for (int i = 0; i < subjects; ++i) {
    runner.run(i, static_cast<std::uint64_t>(i), report.cohort[static_cast<std::size_t>(i)], all, report.runs);
    refresh();
  }
  runner.run(-1, kSurrogateStream, config.cohort.surrogate, {ControllerKind::GP, ControllerKind::TunedPD},
             report.surrogate_runs);
  refresh();
  if (options.write_files) write_json(out / "latency.json", latency_json(report));
  return report;
}

}  // namespace rehab::harness
