#include "varnn/cells.hpp"

#include <stdexcept>

namespace varnn {

GruParams::GruParams(int n, int p)
    : hidden(n),
      controls(p),
      U_r(n, n),
      U_z(n, n),
      U_n(n, n),
      W_r(n, 0.0),
      W_z(n, 0.0),
      W_n(n, 0.0),
      C_r(n, p),
      C_z(n, p),
      C_n(n, p),
      b_r(n, 0.0),
      b_z(n, 0.0),
      b_n(n, 0.0) {}

LstmParams::LstmParams(int n, int p)
    : hidden(n),
      controls(p),
      U_i(n, n),
      U_f(n, n),
      U_g(n, n),
      U_o(n, n),
      W_i(n, 0.0),
      W_f(n, 0.0),
      W_g(n, 0.0),
      W_o(n, 0.0),
      C_i(n, p),
      C_f(n, p),
      C_g(n, p),
      C_o(n, p),
      b_i(n, 0.0),
      b_f(n, 0.0),
      b_g(n, 0.0),
      b_o(n, 0.0) {}

ModelState Model::zero_state() const {
  ModelState s;
  s.h.assign(static_cast<size_t>(config.hidden), 0.0);
  if (config.cell == CellKind::Lstm) s.c.assign(static_cast<size_t>(config.hidden), 0.0);
  return s;
}

// a = U h + C ctrl + W x + b, one gate pre-activation
static void gate_preact(const Matrix& U, const Matrix& C, const Vector& W, const Vector& b,
                        std::span<const double> h, std::span<const double> ctrl, double x,
                        std::span<double> a) {
  const int n = U.rows;
  const int p = C.cols;
  for (int r = 0; r < n; ++r) {
    double s = b[r] + W[r] * x;
    const double* urow = U.a.data() + static_cast<size_t>(r) * n;
    for (int c = 0; c < n; ++c) s += urow[c] * h[c];
    if (p > 0) {
      const double* crow = C.a.data() + static_cast<size_t>(r) * p;
      for (int c = 0; c < p; ++c) s += crow[c] * ctrl[c];
    }
    a[r] = s;
  }
}

void gru_step_core(const GruParams& p, std::span<const double> h_prev, double x,
                   std::span<const double> ctrl, std::span<double> r_out, std::span<double> z_out,
                   std::span<double> n_out, std::span<double> h_out) {
  const int n = p.hidden;
  gate_preact(p.U_r, p.C_r, p.W_r, p.b_r, h_prev, ctrl, x, r_out);
  gate_preact(p.U_z, p.C_z, p.W_z, p.b_z, h_prev, ctrl, x, z_out);
  for (int i = 0; i < n; ++i) {
    r_out[i] = sigmoid_scalar(r_out[i]);
    z_out[i] = sigmoid_scalar(z_out[i]);
  }
  // n gate sees r .* h_prev through U_n
  for (int r = 0; r < n; ++r) {
    double s = p.b_n[r] + p.W_n[r] * x;
    const double* urow = p.U_n.a.data() + static_cast<size_t>(r) * n;
    for (int c = 0; c < n; ++c) s += urow[c] * (r_out[c] * h_prev[c]);
    if (p.controls > 0) {
      const double* crow = p.C_n.a.data() + static_cast<size_t>(r) * p.controls;
      for (int c = 0; c < p.controls; ++c) s += crow[c] * ctrl[c];
    }
    n_out[r] = tanh_scalar(s);
  }
  for (int i = 0; i < n; ++i) {
    h_out[i] = (1.0 - z_out[i]) * n_out[i] + z_out[i] * h_prev[i];
  }
}

void lstm_step_core(const LstmParams& p, GateMode mode, std::span<const double> h_prev,
                    std::span<const double> c_prev, double x, std::span<const double> ctrl,
                    std::span<double> i_out, std::span<double> f_out, std::span<double> g_out,
                    std::span<double> o_out, std::span<double> s_out, std::span<double> h_out,
                    std::span<double> c_out) {
  const int n = p.hidden;
  gate_preact(p.U_i, p.C_i, p.W_i, p.b_i, h_prev, ctrl, x, s_out);
  gate_preact(p.U_f, p.C_f, p.W_f, p.b_f, h_prev, ctrl, x, f_out);
  gate_preact(p.U_g, p.C_g, p.W_g, p.b_g, h_prev, ctrl, x, g_out);
  gate_preact(p.U_o, p.C_o, p.W_o, p.b_o, h_prev, ctrl, x, o_out);
  for (int k = 0; k < n; ++k) {
    s_out[k] = sigmoid_scalar(s_out[k]);
    f_out[k] = sigmoid_scalar(f_out[k]);
    g_out[k] = tanh_scalar(g_out[k]);
    o_out[k] = sigmoid_scalar(o_out[k]);
  }
  if (mode.kind == GateMode::CoupledStable) {
    for (int k = 0; k < n; ++k) i_out[k] = (1.0 - mode.eps) * (1.0 - f_out[k]) * s_out[k];
  } else {
    for (int k = 0; k < n; ++k) i_out[k] = s_out[k];
  }
  for (int k = 0; k < n; ++k) {
    c_out[k] = f_out[k] * c_prev[k] + i_out[k] * g_out[k];
    h_out[k] = o_out[k] * tanh_scalar(c_out[k]);
  }
}

static void check_dims(int hidden, int params_controls, size_t state_h, size_t ctrl, const char* op) {
  if (static_cast<int>(state_h) != hidden) {
    throw std::invalid_argument(std::string(op) + ": state size " + std::to_string(state_h) +
                                " does not match hidden size " + std::to_string(hidden));
  }
  if (static_cast<int>(ctrl) != params_controls) {
    throw std::invalid_argument(std::string(op) + ": control vector size " + std::to_string(ctrl) +
                                " does not match configured control count " +
                                std::to_string(params_controls));
  }
}

GruState gru_step(const GruParams& p, const GruState& state, double x, const Vector& ctrl) {
  check_dims(p.hidden, p.controls, state.h.size(), ctrl.size(), "gru_step");
  const size_t n = static_cast<size_t>(p.hidden);
  GruState out;
  out.h.assign(n, 0.0);
  Vector r(n), z(n), ng(n);
  gru_step_core(p, state.h, x, ctrl, r, z, ng, out.h);
  return out;
}

LstmState lstm_step(const LstmParams& p, GateMode mode, const LstmState& state, double x,
                    const Vector& ctrl) {
  check_dims(p.hidden, p.controls, state.h.size(), ctrl.size(), "lstm_step");
  if (state.c.size() != static_cast<size_t>(p.hidden)) {
    throw std::invalid_argument("lstm_step: cell state size mismatch");
  }
  const size_t n = static_cast<size_t>(p.hidden);
  LstmState out;
  out.h.assign(n, 0.0);
  out.c.assign(n, 0.0);
  Vector ig(n), fg(n), gg(n), og(n), sg(n);
  lstm_step_core(p, mode, state.h, state.c, x, ctrl, ig, fg, gg, og, sg, out.h, out.c);
  return out;
}

double output_sample(const OutputLayer& out, std::span<const double> h, double x) {
  return dot(out.w_out, h) + out.b_out + out.skip_gain * x;
}

double model_step(const Model& m, ModelState& state, double x, std::span<const double> ctrl) {
  const size_t n = static_cast<size_t>(m.config.hidden);
  Vector h_new(n);
  if (m.config.cell == CellKind::Gru) {
    Vector r(n), z(n), ng(n);
    gru_step_core(m.gru(), state.h, x, ctrl, r, z, ng, h_new);
    state.h = h_new;
  } else {
    Vector c_new(n), ig(n), fg(n), gg(n), og(n), sg(n);
    lstm_step_core(m.lstm(), m.config.gate_mode, state.h, state.c, x, ctrl, ig, fg, gg, og, sg,
                   h_new, c_new);
    state.h = h_new;
    state.c = c_new;
  }
  return output_sample(m.out, state.h, x);
}

static void check_sequence(const Model& m, const ModelState& st, size_t len,
                           const ControlTrajectory& ctrl, const char* op) {
  if (static_cast<size_t>(ctrl.length) != len) {
    throw std::invalid_argument(std::string(op) + ": input length " + std::to_string(len) +
                                " does not match control trajectory length " +
                                std::to_string(ctrl.length));
  }
  if (ctrl.controls != m.config.controls) {
    throw std::invalid_argument(std::string(op) + ": control trajectory width mismatch");
  }
  if (static_cast<int>(st.h.size()) != m.config.hidden) {
    throw std::invalid_argument(std::string(op) + ": initial state size mismatch");
  }
}

SequenceResult run_sequence(const Model& m, const ModelState& initial, std::span<const double> x,
                            const ControlTrajectory& ctrl) {
  check_sequence(m, initial, x.size(), ctrl, "run_sequence");
  SequenceResult res;
  res.output.resize(x.size());
  res.final_state = initial;
  const size_t n = static_cast<size_t>(m.config.hidden);

  if (m.config.cell == CellKind::Gru) {
    const GruParams& p = m.gru();
    Vector r(n), z(n), ng(n), h_new(n);
    for (size_t t = 0; t < x.size(); ++t) {
      gru_step_core(p, res.final_state.h, x[t], ctrl.row(static_cast<int>(t)), r, z, ng, h_new);
      res.final_state.h.swap(h_new);
      res.output[t] = output_sample(m.out, res.final_state.h, x[t]);
    }
  } else {
    const LstmParams& p = m.lstm();
    Vector ig(n), fg(n), gg(n), og(n), sg(n), h_new(n), c_new(n);
    for (size_t t = 0; t < x.size(); ++t) {
      lstm_step_core(p, m.config.gate_mode, res.final_state.h, res.final_state.c, x[t],
                     ctrl.row(static_cast<int>(t)), ig, fg, gg, og, sg, h_new, c_new);
      res.final_state.h.swap(h_new);
      res.final_state.c.swap(c_new);
      res.output[t] = output_sample(m.out, res.final_state.h, x[t]);
    }
  }
  return res;
}

AutonomousTrace autonomous_run(const Model& m, const ModelState& initial,
                               const ControlTrajectory& ctrl) {
  const size_t T = static_cast<size_t>(ctrl.length);
  AutonomousTrace tr;
  tr.h_norms.resize(T);
  if (m.config.cell == CellKind::Lstm) tr.c_norms.resize(T);
  tr.output.resize(T);
  tr.final_state = initial;
  const size_t n = static_cast<size_t>(m.config.hidden);
  if (static_cast<int>(initial.h.size()) != m.config.hidden) {
    throw std::invalid_argument("autonomous_run: initial state size mismatch");
  }
  if (ctrl.controls != m.config.controls) {
    throw std::invalid_argument("autonomous_run: control trajectory width mismatch");
  }

  if (m.config.cell == CellKind::Gru) {
    const GruParams& p = m.gru();
    Vector r(n), z(n), ng(n), h_new(n);
    for (size_t t = 0; t < T; ++t) {
      gru_step_core(p, tr.final_state.h, 0.0, ctrl.row(static_cast<int>(t)), r, z, ng, h_new);
      tr.final_state.h.swap(h_new);
      tr.h_norms[t] = vec_norm(tr.final_state.h, NormKind::L2);
      tr.output[t] = output_sample(m.out, tr.final_state.h, 0.0);
    }
  } else {
    const LstmParams& p = m.lstm();
    Vector ig(n), fg(n), gg(n), og(n), sg(n), h_new(n), c_new(n);
    for (size_t t = 0; t < T; ++t) {
      lstm_step_core(p, m.config.gate_mode, tr.final_state.h, tr.final_state.c, 0.0,
                     ctrl.row(static_cast<int>(t)), ig, fg, gg, og, sg, h_new, c_new);
      tr.final_state.h.swap(h_new);
      tr.final_state.c.swap(c_new);
      tr.h_norms[t] = vec_norm(tr.final_state.h, NormKind::L2);
      tr.c_norms[t] = vec_norm(tr.final_state.c, NormKind::L2);
      tr.output[t] = output_sample(m.out, tr.final_state.h, 0.0);
    }
  }
  return tr;
}

}  // namespace varnn
