// Reverse-mode differentiation through the unrolled cells, MAE loss, ADAM,
// and the TBPTT training loop with within-sample state carryover. Gradients
// flow through the constraint materialization (spectral rescale with the
// singular-vector estimates held constant); they never cross segment
// boundaries.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "varnn/cells.hpp"
#include "varnn/constraints.hpp"
#include "varnn/datasets.hpp"

namespace varnn {

struct TrainConfig {
  double learning_rate = 3e-4;
  double weight_decay = 0.0;
  int batch_size = 32;
  int tbptt_length = 1024;
  int epochs = 10;
  uint64_t seed = 0;
  std::string loss = "mae";
};

struct AdamState {
  Vector m, v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(size_t n_params) : m(n_params, 0.0), v(n_params, 0.0) {}
};

// Gradient accumulators in materialized-parameter space. The cell variant
// reuses the parameter structs as storage.
struct CellGrads {
  std::variant<GruParams, LstmParams> cell;
  Vector w_out;
  double b_out = 0.0;

  static CellGrads zeros(const ModelConfig& cfg);
  void add(const CellGrads& other);
};

double mae(std::span<const double> pred, std::span<const double> target);

struct SegmentResult {
  double loss = 0.0;      // MAE over the segment
  FreeParams grad;        // same layout as the free parameters
  ModelState final_state; // detached
};

// Loss and exact reverse-mode gradients for one TBPTT segment. The incoming
// state is treated as a constant.
SegmentResult backward_segment(const ModelConfig& cfg, const Materialized& mat,
                               const FreeParams& free, const ModelState& state0,
                               std::span<const double> x, const ControlTrajectory& ctrl,
                               std::span<const double> target);

// One batch element's segment, reading/writing caller-owned slots.
struct SegmentTask {
  std::span<const double> x;
  std::span<const double> target;
  std::span<const double> controls;  // constant control vector for the segment
  const ModelState* state_in = nullptr;
  ModelState* state_out = nullptr;
  CellGrads* grads_out = nullptr;
  double* loss_out = nullptr;
};

// Runs every task and leaves per-element results in the task slots. The
// parallel path distributes elements over OpenMP threads; both paths execute
// the identical per-element kernel, so results are bitwise equal.
void run_segment_tasks(const Materialized& mat, std::span<SegmentTask> tasks, bool parallel);

// Fixed-order reduction of per-element gradients (independent of thread
// scheduling), then projection into free-parameter space.
void sum_and_project(const ModelConfig& cfg, const Materialized& mat, const FreeParams& free,
                     std::span<const CellGrads> per_element, std::span<const char> active,
                     FreeParams& grad_out);

// Standard ADAM with bias correction; weight decay is added to the gradient.
void adam_step(FreeParams& params, const FreeParams& grads, AdamState& opt, double lr,
               double weight_decay = 0.0);

// Recurrent matrices: random orthogonal scaled to spectral norm 0.5.
// Input/conditioning weights: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
// Biases zero. Starts inside the stable feasible region.
FreeParams init_params(const ModelConfig& cfg, SeededRng& rng);

// MAE of the model over a dataset, per-sample zero initial state, errors
// concatenated across samples.
double dataset_mae(const Model& m, const std::vector<Sample>& samples);

struct EpochRow {
  int epoch = 0;
  double train_mae = 0.0;
  double eval_mae = 0.0;
  double eval_mae_db = 0.0;
  bool constraints_pass = true;
};

struct TrainResult {
  FreeParams final_params;
  FreeParams best_params;
  AdamState adam;
  SpectralState spectral;
  std::vector<EpochRow> history;
  int best_epoch = -1;
  double best_eval_mae = 0.0;
  int64_t total_steps = 0;
  bool diverged = false;
};

// Deterministic given the seed: init, shuffling, everything. Best checkpoint
// selected by evaluation MAE. Non-finite loss aborts with partial history
// and diverged set.
TrainResult train(const ModelConfig& cfg, const StabilityMargin& margin, const TrainConfig& tc,
                  const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                  bool parallel_batch = true);

struct GradCheckReport {
  struct Entry {
    std::string block;
    double max_rel_err = 0.0;
  };
  std::vector<Entry> entries;
  double worst = 0.0;
};

// Central finite differences over every free parameter; relative error is
// normalized by the largest gradient magnitude in the block.
GradCheckReport gradient_check(const ModelConfig& cfg, const StabilityMargin& margin,
                               const FreeParams& at, const ModelState& state0,
                               std::span<const double> x, const ControlTrajectory& ctrl,
                               std::span<const double> target, double fd_step = 1e-6);

}  // namespace varnn
