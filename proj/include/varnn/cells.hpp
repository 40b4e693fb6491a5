// Forward dynamics of control-conditioned GRU and LSTM cells, plus the
// affine output layer mapping hidden state to an audio sample.
//
// Conditioning enters through per-gate C matrices; the scalar audio input
// through per-gate W vectors. With x = 0 the cells are exactly the
// autonomous systems the stability constraints are derived for.
#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "varnn/numerics.hpp"

namespace varnn {

enum class CellKind { Gru, Lstm };

struct GateMode {
  enum Kind { Standard, CoupledStable } kind = Standard;
  // CoupledStable: i = (1-eps) * (1-f) .* sigmoid(a_i), which bounds every
  // component of f + i strictly below 1.
  double eps = 1e-3;

  static GateMode standard() { return {Standard, 0.0}; }
  static GateMode coupled_stable(double eps) { return {CoupledStable, eps}; }
};

struct ModelConfig {
  CellKind cell = CellKind::Gru;
  int hidden = 16;
  int controls = 0;
  bool stable = false;
  GateMode gate_mode = GateMode::standard();
  double sample_rate = 48000.0;
  double skip_gain = 1.0;  // 0 disables the input skip
};

struct GruParams {
  int hidden = 0;
  int controls = 0;
  Matrix U_r, U_z, U_n;  // hidden x hidden
  Vector W_r, W_z, W_n;  // hidden (scalar audio input path)
  Matrix C_r, C_z, C_n;  // hidden x controls
  Vector b_r, b_z, b_n;  // hidden

  GruParams() = default;
  GruParams(int n, int p);
};

struct LstmParams {
  int hidden = 0;
  int controls = 0;
  Matrix U_i, U_f, U_g, U_o;
  Vector W_i, W_f, W_g, W_o;
  Matrix C_i, C_f, C_g, C_o;
  Vector b_i, b_f, b_g, b_o;

  LstmParams() = default;
  LstmParams(int n, int p);
};

struct GruState {
  Vector h;
};

struct LstmState {
  Vector h;
  Vector c;
};

// One state type for both cells; c is unused for GRU.
struct ModelState {
  Vector h;
  Vector c;
};

struct OutputLayer {
  Vector w_out;
  double b_out = 0.0;
  double skip_gain = 1.0;
};

struct Model {
  ModelConfig config;
  std::variant<GruParams, LstmParams> cell;
  OutputLayer out;

  const GruParams& gru() const { return std::get<GruParams>(cell); }
  const LstmParams& lstm() const { return std::get<LstmParams>(cell); }
  GruParams& gru() { return std::get<GruParams>(cell); }
  LstmParams& lstm() { return std::get<LstmParams>(cell); }

  ModelState zero_state() const;
};

// Per-sample control trajectory, row t = control vector at step t.
struct ControlTrajectory {
  int length = 0;
  int controls = 0;
  std::vector<double> data;  // length * controls, row-major

  ControlTrajectory() = default;
  ControlTrajectory(int len, int p) : length(len), controls(p), data(static_cast<size_t>(len) * p, 0.0) {}

  std::span<const double> row(int t) const {
    return {data.data() + static_cast<size_t>(t) * controls, static_cast<size_t>(controls)};
  }
  std::span<double> row(int t) {
    return {data.data() + static_cast<size_t>(t) * controls, static_cast<size_t>(controls)};
  }
};

// Raw step kernels. All spans must have the right sizes; gate outputs are
// written so the backward pass can reuse them.
void gru_step_core(const GruParams& p, std::span<const double> h_prev, double x,
                   std::span<const double> ctrl, std::span<double> r_out,
                   std::span<double> z_out, std::span<double> n_out,
                   std::span<double> h_out);

// s_out receives sigmoid(a_i); in Standard mode i == s, in CoupledStable mode
// i = (1-eps)(1-f)s.
void lstm_step_core(const LstmParams& p, GateMode mode, std::span<const double> h_prev,
                    std::span<const double> c_prev, double x, std::span<const double> ctrl,
                    std::span<double> i_out, std::span<double> f_out, std::span<double> g_out,
                    std::span<double> o_out, std::span<double> s_out, std::span<double> h_out,
                    std::span<double> c_out);

GruState gru_step(const GruParams& p, const GruState& state, double x, const Vector& ctrl);
LstmState lstm_step(const LstmParams& p, GateMode mode, const LstmState& state, double x,
                    const Vector& ctrl);

double output_sample(const OutputLayer& out, std::span<const double> h, double x);

// One full model step; returns the audio sample.
double model_step(const Model& m, ModelState& state, double x, std::span<const double> ctrl);

struct SequenceResult {
  std::vector<double> output;
  ModelState final_state;
};

// Unrolls the model over an input buffer and a control trajectory of equal
// length. Pure function of its arguments; bit-identical on repeated calls.
SequenceResult run_sequence(const Model& m, const ModelState& initial, std::span<const double> x,
                            const ControlTrajectory& ctrl);

struct AutonomousTrace {
  Vector h_norms;          // ||h_t||_2 per step
  Vector c_norms;          // ||c_t||_2 per step (LSTM only, else empty)
  std::vector<double> output;
  ModelState final_state;
};

// run_sequence with zero input, additionally recording state norms.
AutonomousTrace autonomous_run(const Model& m, const ModelState& initial,
                               const ControlTrajectory& ctrl);

}  // namespace varnn
