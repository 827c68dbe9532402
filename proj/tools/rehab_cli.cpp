#include <cmath>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "rehab/harness.hpp"

namespace {

using namespace rehab;
using namespace rehab::harness;

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? default_config() : load_config(path);
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    try {
      v = std::stod(item);
    } catch (const std::exception&) {
      throw UsageError("invalid size '" + item + "'");
    }
    if (!(v >= 1.0) || v != std::floor(v)) throw UsageError("invalid size '" + item + "'");
    sizes.push_back(static_cast<std::size_t>(v));
  }
  if (sizes.empty()) throw UsageError("no sizes given");
  return sizes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning-based individualized control for robotic rehabilitation: simulation harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string controller = "gp";
  int patient = 0;
  std::uint64_t seed = 1;
  std::string out;
  std::string sizes = "1e3,1e4,1e5";
  std::size_t window = 500;
  std::size_t exact_n = 1000;
  std::string in;

  auto* trial = app.add_subcommand("trial", "Run one closed-loop trial and write its per-tick CSV");
  trial->add_option("--config", config_path, "Experiment config JSON");
  trial->add_option("--controller", controller, "Controller variant")
      ->check(CLI::IsMember({"low", "high", "gp", "tuned"}));
  trial->add_option("--patient", patient, "Cohort index, or -1 for the surrogate patient");
  trial->add_option("--seed", seed, "Run seed");
  trial->add_option("--out", out, "CSV path (default: <output_dir>/trial.csv)");

  auto* study = app.add_subcommand("study", "Run the full cohort study");
  study->add_option("--config", config_path, "Experiment config JSON");
  study->add_option("--out", out, "Output directory (overrides the config)");

  auto* bench = app.add_subcommand("bench", "Measure update and predict latency versus data size");
  bench->add_option("--config", config_path, "Experiment config JSON");
  bench->add_option("--sizes", sizes, "Comma-separated sample counts");
  bench->add_option("--window", window, "Timed ticks per size");
  bench->add_option("--exact-n", exact_n, "Size of the exact-GP baseline (0 skips it)");
  bench->add_option("--out", out, "Write the report JSON here as well");

  auto* export_cohort = app.add_subcommand("export-cohort", "Sample the configured cohort and write it as JSON");
  export_cohort->add_option("--config", config_path, "Experiment config JSON");
  export_cohort->add_option("--out", out, "Cohort JSON path")->required();

  auto* import_cohort = app.add_subcommand("import-cohort", "Validate a cohort JSON and emit a config using it");
  import_cohort->add_option("--in", in, "Cohort JSON path")->required();
  import_cohort->add_option("--config", config_path, "Base experiment config JSON");
  import_cohort->add_option("--out", out, "Config JSON path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*trial) {
      ExperimentConfig config = config_or_default(config_path);
      const auto cohort = load_cohort(config);
      human::PatientParams who;
      if (patient == -1) {
        who = config.cohort.surrogate;
      } else if (patient >= 0 && static_cast<std::size_t>(patient) < cohort.size()) {
        who = cohort[static_cast<std::size_t>(patient)];
      } else {
        throw UsageError("patient index out of range");
      }
      const auto kind = control::parse_controller_kind(controller);
      const RunLog log = run_trial(config, kind, who, seed);
      const auto m = summarize(log, 1e6 * config.tick_period());
      const std::filesystem::path csv = out.empty() ? std::filesystem::path(config.output_dir) / "trial.csv"
                                                    : std::filesystem::path(out);
      write_text(csv, run_csv(log));
      nlohmann::json j = {{"controller", controller},
                          {"patient", patient},
                          {"seed", seed},
                          {"sum_abs_error", m.sum_abs_error},
                          {"sum_abs_joint_error", m.sum_abs_joint_error},
                          {"max_force_norm", m.max_force_norm},
                          {"failed", m.failed},
                          {"failure_reason", log.failure_reason},
                          {"ticks", m.ticks},
                          {"gp_samples", log.gp_samples},
                          {"p99_update_predict_us", m.combined.p99},
                          {"ticks_over_budget", m.combined.over_budget},
                          {"csv", csv.string()}};
      if (m.failed) j["failure_time"] = m.failure_time;
      std::cout << j.dump(2) << "\n";
    } else if (*study) {
      ExperimentConfig config = config_or_default(config_path);
      if (!out.empty()) config.output_dir = out;
      StudyOptions options;
      options.on_run = [](const RunResult& r) {
        std::cerr << (r.patient < 0 ? std::string("surrogate") : "patient " + std::to_string(r.patient)) << " "
                  << control::to_string(r.kind) << " " << (r.training ? "training" : "test") << " " << r.run
                  << ": error " << r.metrics.sum_abs_error << " m, force " << r.metrics.max_force_norm << " N"
                  << (r.metrics.failed ? " FAILED" : "") << "\n";
      };
      const auto report = run_study(config, options);
      nlohmann::json j = summary_json(report);
      std::cout << nlohmann::json{{"variants", j["variants"]}, {"surrogate", j["surrogate"]}}.dump(2) << "\n";
      std::cerr << "wrote " << (std::filesystem::path(config.output_dir) / "summary.json").string() << "\n";
    } else if (*bench) {
      const ExperimentConfig config = config_or_default(config_path);
      const auto report = run_bench(config, parse_sizes(sizes), window, exact_n);
      const auto j = bench_json(report);
      if (!out.empty()) write_json(out, j);
      std::cout << j.dump(2) << "\n";
    } else if (*export_cohort) {
      const ExperimentConfig config = config_or_default(config_path);
      write_json(out, human::cohort_to_json(load_cohort(config)));
    } else if (*import_cohort) {
      ExperimentConfig config = config_or_default(config_path);
      const auto cohort = human::cohort_from_json(read_json(in));
      config.cohort.file = in;
      config.cohort.size = static_cast<int>(cohort.size());
      load_cohort(config);
      const auto j = to_json(config);
      if (out.empty())
        std::cout << j.dump(2) << "\n";
      else
        write_json(out, j);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
