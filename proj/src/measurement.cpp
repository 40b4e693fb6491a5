#include "varnn/measurement.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "varnn/training.hpp"

namespace varnn {

static constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ControlTrajectory smooth_schedule(int length, int p, double sample_rate, double cutoff_hz) {
  if (length < 1) throw std::invalid_argument("smooth_schedule: length must be >= 1");
  ControlTrajectory tr(length, p);
  const int t1 = length / 3;
  const int t2 = (2 * length) / 3;
  const double a = std::exp(-2.0 * 3.14159265358979323846 * cutoff_hz / sample_rate);
  double y = 0.0;
  for (int t = 0; t < length; ++t) {
    double u;
    if (t < t1) {
      u = static_cast<double>(t) / static_cast<double>(t1);
    } else if (t < t2) {
      u = 1.0 - 2.0 * static_cast<double>(t - t1) / static_cast<double>(t2 - t1);
    } else {
      u = -1.0 + static_cast<double>(t - t2) / static_cast<double>(length - t2);
    }
    y = a * y + (1.0 - a) * u;
    auto r = tr.row(t);
    for (int j = 0; j < p; ++j) r[j] = y;
  }
  return tr;
}

ControlTrajectory random_schedule(int length, int p, uint64_t seed) {
  if (length < 1) throw std::invalid_argument("random_schedule: length must be >= 1");
  ControlTrajectory tr(length, p);
  SeededRng rng(seed);
  for (auto& v : tr.data) v = rng.uniform(-1.0, 1.0);
  return tr;
}

ControlTrajectory build_schedule(const ConditioningSchedule& sched, double sample_rate) {
  switch (sched.kind) {
    case ScheduleKind::SmoothSweep:
      return smooth_schedule(sched.length, sched.controls, sample_rate, sched.cutoff_hz);
    case ScheduleKind::RandomUniform:
      return random_schedule(sched.length, sched.controls, sched.seed);
    case ScheduleKind::Constant: {
      ControlTrajectory tr(sched.length, sched.controls);
      for (auto& v : tr.data) v = sched.constant_value;
      return tr;
    }
  }
  throw std::logic_error("build_schedule: unknown kind");
}

static const char* scenario_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::SmoothSweep: return "smooth";
    case ScheduleKind::RandomUniform: return "random";
    case ScheduleKind::Constant: return "constant";
  }
  return "?";
}

// Population variance; exact 0 when every value is bitwise identical so the
// minus-infinity contract is airtight.
static double variance(const std::vector<double>& y) {
  double lo = y[0], hi = y[0];
  for (double v : y) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) return 0.0;
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double s = 0.0;
  for (double v : y) s += (v - mean) * (v - mean);
  return s / static_cast<double>(y.size());
}

EnergyReport measure_noise(const Model& m, ScheduleKind kind, const NoiseProtocolConfig& cfg,
                           uint64_t seed, bool keep_traces) {
  if (!(cfg.init_noise_seconds > 0.0 && cfg.settle_seconds > 0.0 && cfg.measure_seconds > 0.0)) {
    throw std::invalid_argument("measure_noise: durations must be positive");
  }
  const int t1 = static_cast<int>(std::lround(cfg.init_noise_seconds * cfg.sample_rate));
  const int t2 = static_cast<int>(std::lround(cfg.settle_seconds * cfg.sample_rate));
  const int t3 = static_cast<int>(std::lround(cfg.measure_seconds * cfg.sample_rate));
  const int p = m.config.controls;

  SeededRng base(seed);
  SeededRng noise_rng = base.split(1);

  ModelState state = m.zero_state();
  Vector ctrl(static_cast<size_t>(p), cfg.init_control_value);
  long sample_index = 0;
  auto check = [&](double y) {
    if (!std::isfinite(y)) {
      throw std::runtime_error("measure_noise: non-finite model output at sample index " +
                               std::to_string(sample_index));
    }
    ++sample_index;
  };

  for (int t = 0; t < t1; ++t) {
    const double x = cfg.init_noise_amplitude * noise_rng.uniform(-1.0, 1.0);
    check(model_step(m, state, x, ctrl));
  }
  for (int t = 0; t < t2; ++t) {
    check(model_step(m, state, 0.0, ctrl));
  }

  ConditioningSchedule sched;
  sched.kind = kind;
  sched.length = t3;
  sched.controls = p;
  sched.seed = base.split(2).seed();
  sched.cutoff_hz = cfg.smooth_cutoff_hz;
  sched.constant_value = cfg.init_control_value;
  ControlTrajectory traj = build_schedule(sched, cfg.sample_rate);

  std::vector<double> y3(static_cast<size_t>(t3));
  for (int t = 0; t < t3; ++t) {
    y3[static_cast<size_t>(t)] = model_step(m, state, 0.0, traj.row(t));
    check(y3[static_cast<size_t>(t)]);
  }

  EnergyReport rep;
  rep.scenario = scenario_name(kind);
  rep.sample_rate = cfg.sample_rate;
  const double var = variance(y3);
  rep.energy_dbfs = var == 0.0 ? kNegInf : 10.0 * std::log10(var);
  if (keep_traces) {
    rep.has_traces = true;
    rep.output_trace = std::move(y3);
    rep.conditioning_trace = std::move(traj);
  }
  return rep;
}

double evaluate_mae_db(const Model& m, const std::vector<Sample>& eval_set) {
  const double e = dataset_mae(m, eval_set);
  return e > 0.0 ? 20.0 * std::log10(e) : kNegInf;
}

RunAggregate aggregate_runs(const std::vector<double>& linear_losses, double confidence) {
  const int n = static_cast<int>(linear_losses.size());
  if (n < 2) throw std::invalid_argument("aggregate_runs: need at least 2 runs");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw std::invalid_argument("aggregate_runs: confidence must be in (0,1)");
  }
  double mean = 0.0;
  for (double v : linear_losses) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : linear_losses) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  const boost::math::students_t dist(static_cast<double>(n - 1));
  const double tq = boost::math::quantile(dist, 1.0 - (1.0 - confidence) / 2.0);
  const double half = tq * sd / std::sqrt(static_cast<double>(n));

  RunAggregate agg;
  agg.n = n;
  agg.mean_linear = mean;
  agg.ci_low_linear = mean - half;
  agg.ci_high_linear = mean + half;
  if (mean > 0.0) {
    agg.mean_db = 20.0 * std::log10(mean);
    agg.ci_low_db_offset =
        agg.ci_low_linear > 0.0 ? 20.0 * std::log10(agg.ci_low_linear / mean) : kNegInf;
    agg.ci_high_db_offset = 20.0 * std::log10(agg.ci_high_linear / mean);
  } else {
    agg.mean_db = kNegInf;
    agg.ci_low_db_offset = 0.0;
    agg.ci_high_db_offset = 0.0;
  }
  return agg;
}

void export_trace(const EnergyReport& report, const std::filesystem::path& path,
                  const std::vector<std::string>& control_names) {
  if (!report.has_traces) {
    throw std::invalid_argument("export_trace: report carries no traces");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_trace: cannot open " + path.string());

  out << "time_s";
  for (const auto& name : control_names) out << ',' << name;
  out << ",output,output_dbfs\n";

  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  const int p = report.conditioning_trace.controls;
  for (size_t t = 0; t < report.output_trace.size(); ++t) {
    out << fmt(static_cast<double>(t) / report.sample_rate);
    auto row = report.conditioning_trace.row(static_cast<int>(t));
    for (int j = 0; j < p; ++j) out << ',' << fmt(row[j]);
    const double y = report.output_trace[t];
    out << ',' << fmt(y) << ',';
    if (y != 0.0) out << fmt(20.0 * std::log10(std::fabs(y)));
    out << '\n';
  }
  if (!out) throw std::runtime_error("export_trace: write failed for " + path.string());
}

}  // namespace varnn
