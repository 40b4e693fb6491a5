// Conditioning schedules, the zero-input time-varied-conditioning noise
// protocol, energy/dB metrics, and multi-run aggregation.
//
// Conventions: output signal energy is the variance of the phase-3 output,
// reported as 10*log10(variance) dBFS (variance is a power quantity; a
// full-scale square wave maps to 0 dBFS). Evaluation loss is reported as
// MAE_dB = 20*log10(MAE).
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "varnn/cells.hpp"
#include "varnn/datasets.hpp"
#include "varnn/numerics.hpp"

namespace varnn {

enum class ScheduleKind { SmoothSweep, RandomUniform, Constant };

struct ConditioningSchedule {
  ScheduleKind kind = ScheduleKind::SmoothSweep;
  int length = 0;
  int controls = 0;
  uint64_t seed = 0;         // RandomUniform
  double cutoff_hz = 10.0;   // SmoothSweep
  double constant_value = 0.0;
};

// Three equal linear ramps 0 -> 1 -> -1 -> 0 through a one-pole lowpass
// y_t = a*y_{t-1} + (1-a)*u_t, a = exp(-2*pi*cutoff/sr), filter state 0.
// Every control shares the one trajectory.
ControlTrajectory smooth_schedule(int length, int p, double sample_rate, double cutoff_hz);

// i.i.d. uniform(-1, 1) per sample per control; deliberately not smoothed.
ControlTrajectory random_schedule(int length, int p, uint64_t seed);

ControlTrajectory build_schedule(const ConditioningSchedule& sched, double sample_rate);

struct NoiseProtocolConfig {
  double sample_rate = 48000.0;
  double init_noise_seconds = 0.2;
  double settle_seconds = 1.0;
  double measure_seconds = 1.0;
  double init_noise_amplitude = 1.0;
  double init_control_value = 0.0;
  double smooth_cutoff_hz = 10.0;
};

struct EnergyReport {
  std::string scenario;
  double energy_dbfs = 0.0;  // -inf iff phase-3 variance is exactly 0
  double sample_rate = 48000.0;
  bool has_traces = false;
  std::vector<double> output_trace;      // phase 3 only
  ControlTrajectory conditioning_trace;  // phase 3 only
};

// Phase 1: white-noise input, controls at init value. Phase 2: zero input,
// controls held. Phase 3: zero input, controls follow the schedule; energy is
// measured over phase 3 alone. Throws on non-finite model output, naming the
// sample index.
EnergyReport measure_noise(const Model& m, ScheduleKind kind, const NoiseProtocolConfig& cfg,
                           uint64_t seed, bool keep_traces = false);

// 20*log10(MAE over concatenated per-sample errors); -inf for a perfect model.
double evaluate_mae_db(const Model& m, const std::vector<Sample>& eval_set);

struct RunAggregate {
  int n = 0;
  double mean_linear = 0.0;
  double ci_low_linear = 0.0;
  double ci_high_linear = 0.0;
  double mean_db = 0.0;
  double ci_low_db_offset = 0.0;   // <= 0, relative to mean_db
  double ci_high_db_offset = 0.0;  // >= 0
};

// Two-sided Student-t confidence interval computed on linear values, then
// converted to dB (offsets relative to the mean, "(-lo, +hi)" form).
RunAggregate aggregate_runs(const std::vector<double>& linear_losses, double confidence = 0.95);

// CSV with columns time_s, one column per control, output, output_dbfs.
// Floats carry 17 significant digits so the trace round-trips exactly;
// output_dbfs is empty where the output is exactly 0.
void export_trace(const EnergyReport& report, const std::filesystem::path& path,
                  const std::vector<std::string>& control_names);

}  // namespace varnn
