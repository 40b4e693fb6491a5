// Stability-enforcing parametrizations: a deterministic map from free
// trainable parameters to cell parameters satisfying
//   GRU:  C_n = O, b_n = 0, ||U_n||_2 <= 1 - eps_spec
//   LSTM: C_g = O, b_g = 0, ||U_g||_2 <= 1 - eps_spec, coupled gates
// plus independent re-verification of every constraint.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "varnn/cells.hpp"
#include "varnn/numerics.hpp"

namespace varnn {

struct StabilityMargin {
  double spectral = 1e-3;  // ||U||_2 <= 1 - spectral
  double gate = 1e-3;      // LSTM CoupledStable slack
};

// Named block inside the flat free-parameter vector. cols == 1 for vectors
// and scalars.
struct ParamBlock {
  std::string name;
  int rows = 0;
  int cols = 1;
  size_t offset = 0;

  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

// Flat trainable parameter vector with a named block layout. The layout for
// stable models simply omits the structurally-zero blocks (C_n/b_n or
// C_g/b_g), so those constraints hold bit-exactly by construction.
struct FreeParams {
  std::vector<ParamBlock> blocks;
  std::vector<double> values;

  const ParamBlock* find(const std::string& name) const;
  std::span<double> view(const ParamBlock& b) {
    return {values.data() + b.offset, b.size()};
  }
  std::span<const double> view(const ParamBlock& b) const {
    return {values.data() + b.offset, b.size()};
  }
  std::span<const double> view(const std::string& name) const;
  std::span<double> view(const std::string& name);
};

FreeParams make_free_params(const ModelConfig& cfg);

// Power-iteration vectors persisted across materializations of the same
// slowly changing matrix (warm start during training).
struct SpectralState {
  PowerIterState pi;
};

// Record of the spectral rescale applied to the constrained recurrent matrix
// (identity when the free matrix was already inside the feasible ball). The
// singular-vector estimates are treated as constants when differentiating.
struct SpectralRescale {
  bool applied = false;
  double sigma = 0.0;  // power-iteration estimate of ||U_free||_2
  double scale = 1.0;  // min(1, (1 - eps_spec) / sigma)
  Vector u, v;
};

struct Materialized {
  Model model;
  SpectralRescale rescale;
};

// Options controlling the power iteration inside materialization. Training
// uses the warm defaults; gradient checks use tight tolerances on a copy of
// the spectral state.
struct MaterializeOptions {
  int max_iters = 100;
  double tol = 1e-9;
};

Materialized materialize(const ModelConfig& cfg, const StabilityMargin& margin,
                         const FreeParams& fp, SpectralState& spectral,
                         const MaterializeOptions& opts = {});

// Convenience for tests/tools: fresh spectral state, tight iteration.
Materialized materialize_fresh(const ModelConfig& cfg, const StabilityMargin& margin,
                               const FreeParams& fp);

struct ConstraintCheck {
  std::string name;
  double measured = 0.0;
  double limit = 0.0;
  bool pass = false;
};

struct ConstraintReport {
  std::vector<ConstraintCheck> checks;
  bool all_pass = true;

  void add(const std::string& name, double measured, double limit, bool pass);
};

// Independent re-checks of the materialized parameters; failures are report
// entries, never errors.
ConstraintReport verify_gru(const GruParams& params, const StabilityMargin& margin);
ConstraintReport verify_lstm(const LstmParams& params, const StabilityMargin& margin);

// Dynamic check of ||f + i||_inf over randomized states and controls:
// h in (-1,1)^n, c in (-3,3)^n, controls in [-1,1]^p, x in [-1,1].
double verify_lstm_gate_bound(const LstmParams& params, GateMode mode, int n_samples,
                              SeededRng& rng);

}  // namespace varnn
