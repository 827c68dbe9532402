#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>

#include "rehab/harness.hpp"

namespace rehab::harness {

namespace {

using Clock = std::chrono::steady_clock;

double micros(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

double max_leaf_sigma_f(const loggp::VectorPredictor& vp) {
  double out = 0.0;
  for (int i = 0; i < vp.output_dim(); ++i) {
    const auto& tree = vp.tree(i);
    for (std::size_t l = 0; l < tree.leaf_count(); ++l)
      out = std::max(out, tree.leaf(static_cast<int>(l)).model.hyper().sigma_f);
  }
  return out;
}

}  // namespace

RunLog run_trial(const ExperimentConfig& config, ControllerKind kind,
                 const human::PatientParams& patient, std::uint64_t seed,
                 loggp::VectorPredictor* predictor) {
  config.validate();
  patient.validate();
  const auto model = make_plant(config.plant);
  const int d = model->dof();
  if (patient.dof() != d) throw UsageError("patient dimension does not match the plant");

  std::optional<loggp::VectorPredictor> own;
  const bool learning = kind == ControllerKind::GP;
  if (learning && predictor == nullptr) {
    own.emplace(make_predictor(config, d, loggp::derive_seed(seed, 1)));
    predictor = &*own;
  }
  if (learning && (predictor->input_dim() != 3 * d + 1 || predictor->output_dim() != d))
    throw UsageError("predictor dimensions do not match the plant");
  const auto controller =
      control::make_controller(kind, config.gains_for(kind), learning ? predictor : nullptr);

  const control::RoundedRectangle path(config.reference);
  const plant::TorqueField field = [&](const Vec& q, const Vec& qd, double t) -> Vec {
    const plant::Mat jac = model->task_jacobian(q);
    const Vec f_task =
        human::patient_torque(patient, model->task_position(q), jac * qd, t, path.at(t).q);
    return jac.transpose() * f_task;
  };

  const double dt = config.device_period();
  const int spt = config.steps_per_tick();
  const int ticks = config.tick_count();
  const double tau = config.tick_period();

  RunLog log;
  log.kind = kind;
  log.seed = seed;
  log.dof = d;
  log.records.reserve(static_cast<std::size_t>(ticks));

  auto joint_ref = [&](double t) { return model->joint_motion(path.at(t)); };

  plant::PlantState state;
  {
    const auto r0 = joint_ref(0.0);
    state.q = r0.q;
    state.qd = config.start_at_rest ? Vec(Vec::Zero(d)) : r0.qd;
  }

  std::optional<plant::DifferentiatingSensor> sensor;
  if (config.noise.enabled)
    sensor.emplace(config.noise.sigma_q, config.noise.sigma_qd, tau, loggp::derive_seed(seed, 2));

  const double h = config.gp.predict_ahead * tau;
  auto ahead = [h](const Vec& q, const Vec& qd, const Vec& qdd, double t) {
    return plant::pack_input(q + h * qd, qd + h * qdd, qdd, t + h);
  };

  Vec held_ff = Vec::Zero(d);
  Vec u_applied = control::control_terms(controller, *model, state.q, state.qd, joint_ref(0.0),
                                         held_ff, config.u_max).total;
  control::ControlTerms last_terms =
      control::control_terms(controller, *model, state.q, state.qd, joint_ref(0.0), held_ff, config.u_max);
  // Torque applied at the previous tick, paired with the delayed measurement.
  Vec u_at_prev_tick = Vec::Zero(d);

  const long total_steps = static_cast<long>(ticks) * spt;
  try {
    for (long n = 0; n < total_steps; ++n) {
      // Accumulate in integer steps so tick times are exact multiples of dt.
      state.t = static_cast<double>(n) * dt;
      const double t = state.t;
      const auto ref = joint_ref(t);

      if (n % spt == 0) {
        TickRecord rec;
        rec.t = t;
        rec.q = state.q;
        rec.qd = state.qd;
        rec.q_ref = ref.q;
        rec.u = u_applied;
        rec.u_ctc = last_terms.ctc;
        rec.u_pd = last_terms.pd;
        rec.u_ff = last_terms.feedforward;
        const Vec f = field(state.q, state.qd, t);
        rec.qdd = plant::forward_accel(*model, state.q, state.qd, u_applied, f);

        // Training pair and prediction input.
        Eigen::VectorXd x_train, x_query;
        Vec u_train;
        bool have_train = true;
        if (!sensor) {
          x_train = plant::pack_input(state.q, state.qd, rec.qdd, t);
          x_query = ahead(state.q, state.qd, rec.qdd, t);
          u_train = u_applied;
        } else {
          const auto reading = sensor->observe(state.q, state.qd, t);
          const auto& c = reading.current;
          x_query = ahead(c.q, c.qd, c.qdd, c.t);
          if (reading.central) {
            const auto& m = *reading.central;
            x_train = plant::pack_input(m.q, m.qd, m.qdd, m.t);
            u_train = u_at_prev_tick;
          } else {
            have_train = false;
          }
        }
        u_at_prev_tick = u_applied;

        rec.y = Vec::Constant(d, std::numeric_limits<double>::quiet_NaN());
        if (have_train) {
          const auto pair = plant::residual_sample(u_train, x_train, *model);
          rec.y = pair.y;
          log.max_abs_target = std::max(log.max_abs_target, pair.y.cwiseAbs().maxCoeff());
          if (learning) {
            const auto a = Clock::now();
            predictor->update(pair.x, pair.y);
            rec.update_us = micros(a, Clock::now());
          }
        }
        if (learning) {
          const auto a = Clock::now();
          held_ff = predictor->predict(x_query);
          rec.predict_us = micros(a, Clock::now());
          log.max_abs_feedforward = std::max(log.max_abs_feedforward, held_ff.cwiseAbs().maxCoeff());
        }
        rec.mu = held_ff;

        const Vec p = model->task_position(state.q);
        rec.task_error = (p - path.at(t).q).norm();
        rec.joint_error = (state.q - ref.q).norm();
        log.records.push_back(std::move(rec));
      }

      last_terms = control::control_terms(controller, *model, state.q, state.qd, ref, held_ff, config.u_max);
      u_applied = last_terms.total;
      state = plant::step(*model, state, u_applied, field, dt);
      if (!model->within_workspace(state.q)) {
        log.failed = true;
        log.failure_time = state.t;
        log.failure_reason = "workspace limit exceeded";
        break;
      }
    }
  } catch (const NumericError& e) {
    log.failed = true;
    log.failure_time = state.t;
    log.failure_reason = std::string("numeric failure: ") + e.what();
  }

  if (learning) {
    for (int i = 0; i < predictor->output_dim(); ++i)
      log.gp_samples = std::max(log.gp_samples, predictor->tree(i).total_count());
    log.max_sigma_f = max_leaf_sigma_f(*predictor);
  }
  return log;
}

LatencyStats latency_stats(std::vector<double> samples, double budget_us) {
  LatencyStats s;
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  auto pct = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size()))) - 1;
    return samples[std::min(idx, samples.size() - 1)];
  };
  double sum = 0.0;
  for (double v : samples) {
    sum += v;
    if (v > budget_us) ++s.over_budget;
  }
  s.mean = sum / static_cast<double>(samples.size());
  s.p50 = pct(0.50);
  s.p99 = pct(0.99);
  s.max = samples.back();
  return s;
}

SummaryMetrics summarize(const RunLog& log, double budget_us) {
  SummaryMetrics m;
  m.failed = log.failed;
  m.failure_time = log.failure_time;
  m.failure_reason = log.failure_reason;
  m.ticks = log.records.size();
  std::vector<double> up, pr, co;
  up.reserve(m.ticks);
  pr.reserve(m.ticks);
  co.reserve(m.ticks);
  for (const auto& r : log.records) {
    m.sum_abs_error += r.task_error;
    m.sum_abs_joint_error += r.joint_error;
    m.max_force_norm = std::max(m.max_force_norm, r.u.norm());
    up.push_back(r.update_us);
    pr.push_back(r.predict_us);
    co.push_back(r.update_us + r.predict_us);
  }
  m.update = latency_stats(std::move(up), budget_us);
  m.predict = latency_stats(std::move(pr), budget_us);
  m.combined = latency_stats(std::move(co), budget_us);
  m.fraction_over_budget =
      m.ticks == 0 ? 0.0 : static_cast<double>(m.combined.over_budget) / static_cast<double>(m.ticks);
  return m;
}

}  // namespace rehab::harness
