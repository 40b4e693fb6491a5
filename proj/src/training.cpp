#include "varnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace varnn {

CellGrads CellGrads::zeros(const ModelConfig& cfg) {
  CellGrads g;
  if (cfg.cell == CellKind::Gru) {
    g.cell = GruParams(cfg.hidden, cfg.controls);
  } else {
    g.cell = LstmParams(cfg.hidden, cfg.controls);
  }
  g.w_out.assign(static_cast<size_t>(cfg.hidden), 0.0);
  g.b_out = 0.0;
  return g;
}

static void add_all(Vector& a, const Vector& b) {
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}
static void add_all(Matrix& a, const Matrix& b) {
  for (size_t i = 0; i < a.a.size(); ++i) a.a[i] += b.a[i];
}

void CellGrads::add(const CellGrads& other) {
  if (std::holds_alternative<GruParams>(cell)) {
    auto& a = std::get<GruParams>(cell);
    const auto& b = std::get<GruParams>(other.cell);
    add_all(a.U_r, b.U_r);
    add_all(a.U_z, b.U_z);
    add_all(a.U_n, b.U_n);
    add_all(a.W_r, b.W_r);
    add_all(a.W_z, b.W_z);
    add_all(a.W_n, b.W_n);
    if (a.controls > 0) {
      add_all(a.C_r, b.C_r);
      add_all(a.C_z, b.C_z);
      add_all(a.C_n, b.C_n);
    }
    add_all(a.b_r, b.b_r);
    add_all(a.b_z, b.b_z);
    add_all(a.b_n, b.b_n);
  } else {
    auto& a = std::get<LstmParams>(cell);
    const auto& b = std::get<LstmParams>(other.cell);
    add_all(a.U_i, b.U_i);
    add_all(a.U_f, b.U_f);
    add_all(a.U_g, b.U_g);
    add_all(a.U_o, b.U_o);
    add_all(a.W_i, b.W_i);
    add_all(a.W_f, b.W_f);
    add_all(a.W_g, b.W_g);
    add_all(a.W_o, b.W_o);
    if (a.controls > 0) {
      add_all(a.C_i, b.C_i);
      add_all(a.C_f, b.C_f);
      add_all(a.C_g, b.C_g);
      add_all(a.C_o, b.C_o);
    }
    add_all(a.b_i, b.b_i);
    add_all(a.b_f, b.b_f);
    add_all(a.b_g, b.b_g);
    add_all(a.b_o, b.b_o);
  }
  add_all(w_out, other.w_out);
  b_out += other.b_out;
}

double mae(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("mae: length mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()) + ")");
  }
  if (pred.empty()) throw std::invalid_argument("mae: empty buffers");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

namespace {

inline std::span<double> row(std::vector<double>& buf, size_t t, size_t n) {
  return {buf.data() + t * n, n};
}
inline std::span<const double> crow(const std::vector<double>& buf, size_t t, size_t n) {
  return {buf.data() + t * n, n};
}

// grads += da (outer) h  /  da * x  /  da
inline void accum_gate(Matrix& dU, Matrix& dC, Vector& dW, Vector& db,
                       std::span<const double> da, std::span<const double> h,
                       const double* ctrl, int n_ctrl, double x) {
  const int n = dU.rows;
  for (int r = 0; r < n; ++r) {
    const double d = da[r];
    double* urow = dU.a.data() + static_cast<size_t>(r) * n;
    for (int c = 0; c < n; ++c) urow[c] += d * h[c];
    if (n_ctrl > 0) {
      double* crow = dC.a.data() + static_cast<size_t>(r) * n_ctrl;
      for (int c = 0; c < n_ctrl; ++c) crow[c] += d * ctrl[c];
    }
    dW[r] += d * x;
    db[r] += d;
  }
}

// y += U^T da
inline void add_matvec_t(const Matrix& u, std::span<const double> da, std::span<double> y) {
  const int n = u.rows;
  for (int r = 0; r < n; ++r) {
    const double d = da[r];
    const double* urow = u.a.data() + static_cast<size_t>(r) * n;
    for (int c = 0; c < n; ++c) y[c] += urow[c] * d;
  }
}

double gru_segment_backward(const GruParams& p, const OutputLayer& out, const ModelState& s0,
                            const double* x, const double* tgt, size_t T, const double* ctrl,
                            size_t ctrl_stride, GruParams& dp, Vector& dw_out, double& db_out,
                            ModelState& s_end) {
  const size_t n = static_cast<size_t>(p.hidden);
  const int n_ctrl = p.controls;
  std::vector<double> hs((T + 1) * n), rs(T * n), zs(T * n), ns(T * n), ys(T);
  std::copy(s0.h.begin(), s0.h.end(), hs.begin());

  for (size_t t = 0; t < T; ++t) {
    const double* pt = ctrl + t * ctrl_stride;
    gru_step_core(p, crow(hs, t, n), x[t], {pt, static_cast<size_t>(n_ctrl)}, row(rs, t, n),
                  row(zs, t, n), row(ns, t, n), row(hs, t + 1, n));
    ys[t] = output_sample(out, crow(hs, t + 1, n), x[t]);
  }

  double loss = 0.0;
  for (size_t t = 0; t < T; ++t) loss += std::fabs(ys[t] - tgt[t]);
  loss /= static_cast<double>(T);

  Vector gh(n, 0.0), da_z(n), da_n(n), da_r(n), drh(n), gh_prev(n);
  const double inv_t = 1.0 / static_cast<double>(T);
  for (size_t t = T; t-- > 0;) {
    const double e = ys[t] - tgt[t];
    const double dy = (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) * inv_t;
    auto h_new = crow(hs, t + 1, n);
    auto h_prev = crow(hs, t, n);
    auto r = crow(rs, t, n);
    auto z = crow(zs, t, n);
    auto ng = crow(ns, t, n);
    db_out += dy;
    for (size_t k = 0; k < n; ++k) {
      dw_out[k] += dy * h_new[k];
      gh[k] += dy * out.w_out[k];
    }
    for (size_t k = 0; k < n; ++k) {
      const double dz = gh[k] * (h_prev[k] - ng[k]);
      da_z[k] = dz * z[k] * (1.0 - z[k]);
      const double dn = gh[k] * (1.0 - z[k]);
      da_n[k] = dn * (1.0 - ng[k] * ng[k]);
    }
    std::fill(drh.begin(), drh.end(), 0.0);
    add_matvec_t(p.U_n, da_n, drh);
    for (size_t k = 0; k < n; ++k) {
      const double dr = drh[k] * h_prev[k];
      da_r[k] = dr * r[k] * (1.0 - r[k]);
    }
    const double* pt = ctrl + t * ctrl_stride;
    // a_n saw r .* h_prev through U_n
    {
      const double xt = x[t];
      for (size_t rr = 0; rr < n; ++rr) {
        const double d = da_n[rr];
        double* urow = dp.U_n.a.data() + rr * n;
        for (size_t c = 0; c < n; ++c) urow[c] += d * (r[c] * h_prev[c]);
        if (n_ctrl > 0) {
          double* crow_ = dp.C_n.a.data() + rr * static_cast<size_t>(n_ctrl);
          for (int c = 0; c < n_ctrl; ++c) crow_[c] += d * pt[c];
        }
        dp.W_n[rr] += d * xt;
        dp.b_n[rr] += d;
      }
    }
    accum_gate(dp.U_r, dp.C_r, dp.W_r, dp.b_r, da_r, h_prev, pt, n_ctrl, x[t]);
    accum_gate(dp.U_z, dp.C_z, dp.W_z, dp.b_z, da_z, h_prev, pt, n_ctrl, x[t]);

    for (size_t k = 0; k < n; ++k) gh_prev[k] = gh[k] * z[k] + drh[k] * r[k];
    add_matvec_t(p.U_r, da_r, gh_prev);
    add_matvec_t(p.U_z, da_z, gh_prev);
    gh.swap(gh_prev);
  }

  s_end.h.assign(hs.begin() + static_cast<ptrdiff_t>(T * n), hs.end());
  s_end.c.clear();
  return loss;
}

double lstm_segment_backward(const LstmParams& p, GateMode mode, const OutputLayer& out,
                             const ModelState& s0, const double* x, const double* tgt, size_t T,
                             const double* ctrl, size_t ctrl_stride, LstmParams& dp,
                             Vector& dw_out, double& db_out, ModelState& s_end) {
  const size_t n = static_cast<size_t>(p.hidden);
  const int n_ctrl = p.controls;
  std::vector<double> hs((T + 1) * n), cs((T + 1) * n);
  std::vector<double> is(T * n), fs(T * n), gs(T * n), os(T * n), ss(T * n), tc(T * n), ys(T);
  std::copy(s0.h.begin(), s0.h.end(), hs.begin());
  std::copy(s0.c.begin(), s0.c.end(), cs.begin());

  for (size_t t = 0; t < T; ++t) {
    const double* pt = ctrl + t * ctrl_stride;
    lstm_step_core(p, mode, crow(hs, t, n), crow(cs, t, n), x[t],
                   {pt, static_cast<size_t>(n_ctrl)}, row(is, t, n), row(fs, t, n), row(gs, t, n),
                   row(os, t, n), row(ss, t, n), row(hs, t + 1, n), row(cs, t + 1, n));
    auto ct = crow(cs, t + 1, n);
    for (size_t k = 0; k < n; ++k) tc[t * n + k] = tanh_scalar(ct[k]);
    ys[t] = output_sample(out, crow(hs, t + 1, n), x[t]);
  }

  double loss = 0.0;
  for (size_t t = 0; t < T; ++t) loss += std::fabs(ys[t] - tgt[t]);
  loss /= static_cast<double>(T);

  Vector gh(n, 0.0), gc(n, 0.0), da_i(n), da_f(n), da_g(n), da_o(n), gh_prev(n);
  const double inv_t = 1.0 / static_cast<double>(T);
  const double one_m_eps = 1.0 - mode.eps;
  for (size_t t = T; t-- > 0;) {
    const double e = ys[t] - tgt[t];
    const double dy = (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) * inv_t;
    auto h_new = crow(hs, t + 1, n);
    auto h_prev = crow(hs, t, n);
    auto c_prev = crow(cs, t, n);
    auto ig = crow(is, t, n);
    auto fg = crow(fs, t, n);
    auto gg = crow(gs, t, n);
    auto og = crow(os, t, n);
    auto sg = crow(ss, t, n);
    auto tct = crow(tc, t, n);
    db_out += dy;
    for (size_t k = 0; k < n; ++k) {
      dw_out[k] += dy * h_new[k];
      gh[k] += dy * out.w_out[k];
    }
    for (size_t k = 0; k < n; ++k) {
      const double d_o = gh[k] * tct[k];
      da_o[k] = d_o * og[k] * (1.0 - og[k]);
      gc[k] += gh[k] * og[k] * (1.0 - tct[k] * tct[k]);

      double df = gc[k] * c_prev[k];
      const double di = gc[k] * gg[k];
      const double dg = gc[k] * ig[k];
      if (mode.kind == GateMode::CoupledStable) {
        da_i[k] = di * one_m_eps * (1.0 - fg[k]) * sg[k] * (1.0 - sg[k]);
        df -= di * one_m_eps * sg[k];
      } else {
        da_i[k] = di * sg[k] * (1.0 - sg[k]);
      }
      da_f[k] = df * fg[k] * (1.0 - fg[k]);
      da_g[k] = dg * (1.0 - gg[k] * gg[k]);
      gc[k] *= fg[k];  // becomes gc for t-1
    }
    const double* pt = ctrl + t * ctrl_stride;
    accum_gate(dp.U_i, dp.C_i, dp.W_i, dp.b_i, da_i, h_prev, pt, n_ctrl, x[t]);
    accum_gate(dp.U_f, dp.C_f, dp.W_f, dp.b_f, da_f, h_prev, pt, n_ctrl, x[t]);
    accum_gate(dp.U_g, dp.C_g, dp.W_g, dp.b_g, da_g, h_prev, pt, n_ctrl, x[t]);
    accum_gate(dp.U_o, dp.C_o, dp.W_o, dp.b_o, da_o, h_prev, pt, n_ctrl, x[t]);

    std::fill(gh_prev.begin(), gh_prev.end(), 0.0);
    add_matvec_t(p.U_i, da_i, gh_prev);
    add_matvec_t(p.U_f, da_f, gh_prev);
    add_matvec_t(p.U_g, da_g, gh_prev);
    add_matvec_t(p.U_o, da_o, gh_prev);
    gh.swap(gh_prev);
  }

  s_end.h.assign(hs.begin() + static_cast<ptrdiff_t>(T * n), hs.begin() + static_cast<ptrdiff_t>((T + 1) * n));
  s_end.c.assign(cs.begin() + static_cast<ptrdiff_t>(T * n), cs.begin() + static_cast<ptrdiff_t>((T + 1) * n));
  return loss;
}

// One batch element's segment: forward with cache, backward, detached state.
double segment_kernel(const Materialized& mat, const ModelState& s0, std::span<const double> x,
                      std::span<const double> tgt, const double* ctrl, size_t ctrl_stride,
                      CellGrads& grads, ModelState& s_end) {
  const Model& m = mat.model;
  if (m.config.cell == CellKind::Gru) {
    return gru_segment_backward(m.gru(), m.out, s0, x.data(), tgt.data(), x.size(), ctrl,
                                ctrl_stride, std::get<GruParams>(grads.cell), grads.w_out,
                                grads.b_out, s_end);
  }
  return lstm_segment_backward(m.lstm(), m.config.gate_mode, m.out, s0, x.data(), tgt.data(),
                               x.size(), ctrl, ctrl_stride, std::get<LstmParams>(grads.cell),
                               grads.w_out, grads.b_out, s_end);
}

}  // namespace

SegmentResult backward_segment(const ModelConfig& cfg, const Materialized& mat,
                               const FreeParams& free, const ModelState& state0,
                               std::span<const double> x, const ControlTrajectory& ctrl,
                               std::span<const double> target) {
  if (x.size() != target.size() || static_cast<size_t>(ctrl.length) != x.size()) {
    throw std::invalid_argument("backward_segment: segment length mismatch");
  }
  SegmentResult res;
  res.grad = make_free_params(cfg);
  res.final_state = state0;
  if (x.empty()) {
    res.loss = 0.0;
    return res;
  }
  CellGrads g = CellGrads::zeros(cfg);
  res.loss = segment_kernel(mat, state0, x, target, ctrl.data.data(),
                            static_cast<size_t>(ctrl.controls), g, res.final_state);
  if (!std::isfinite(res.loss)) {
    throw std::runtime_error("backward_segment: training diverged (non-finite loss)");
  }
  const CellGrads one[] = {std::move(g)};
  const char active[] = {1};
  sum_and_project(cfg, mat, free, one, active, res.grad);
  return res;
}

void run_segment_tasks(const Materialized& mat, std::span<SegmentTask> tasks, bool parallel) {
  const int count = static_cast<int>(tasks.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
#endif
  for (int i = 0; i < count; ++i) {
    SegmentTask& t = tasks[i];
    *t.loss_out = segment_kernel(mat, *t.state_in, t.x, t.target, t.controls.data(), 0,
                                 *t.grads_out, *t.state_out);
  }
  (void)parallel;
}

namespace {

void project_block(std::span<double> dst, const Vector& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
void project_block(std::span<double> dst, const Matrix& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src.a[i];
}

// Chain rule through U = Ufree * min(1, k/sigma) with d sigma = u v^T held
// constant: dUfree = scale*G - (scale/sigma) * <G, Ufree>_F * u v^T.
void project_spectral(std::span<double> dst, const Matrix& grad_mat,
                      std::span<const double> u_free, const SpectralRescale& rs) {
  if (!rs.applied) {
    project_block(dst, grad_mat);
    return;
  }
  double gdotu = 0.0;
  for (size_t i = 0; i < dst.size(); ++i) gdotu += grad_mat.a[i] * u_free[i];
  const double coef = rs.scale / rs.sigma * gdotu;
  const int n = grad_mat.rows;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      dst[static_cast<size_t>(r) * n + c] +=
          rs.scale * grad_mat(r, c) - coef * rs.u[static_cast<size_t>(r)] * rs.v[static_cast<size_t>(c)];
    }
  }
}

}  // namespace

void sum_and_project(const ModelConfig& cfg, const Materialized& mat, const FreeParams& free,
                     std::span<const CellGrads> per_element, std::span<const char> active,
                     FreeParams& grad_out) {
  CellGrads total = CellGrads::zeros(cfg);
  for (size_t i = 0; i < per_element.size(); ++i) {
    if (active[i]) total.add(per_element[i]);
  }
  std::fill(grad_out.values.begin(), grad_out.values.end(), 0.0);

  if (cfg.cell == CellKind::Gru) {
    const auto& g = std::get<GruParams>(total.cell);
    project_block(grad_out.view("U_r"), g.U_r);
    project_block(grad_out.view("U_z"), g.U_z);
    if (cfg.stable) {
      project_spectral(grad_out.view("U_n"), g.U_n, free.view("U_n"), mat.rescale);
    } else {
      project_block(grad_out.view("U_n"), g.U_n);
    }
    project_block(grad_out.view("W_r"), g.W_r);
    project_block(grad_out.view("W_z"), g.W_z);
    project_block(grad_out.view("W_n"), g.W_n);
    if (cfg.controls > 0) {
      project_block(grad_out.view("C_r"), g.C_r);
      project_block(grad_out.view("C_z"), g.C_z);
      if (!cfg.stable) project_block(grad_out.view("C_n"), g.C_n);
    }
    project_block(grad_out.view("b_r"), g.b_r);
    project_block(grad_out.view("b_z"), g.b_z);
    if (!cfg.stable) project_block(grad_out.view("b_n"), g.b_n);
  } else {
    const auto& g = std::get<LstmParams>(total.cell);
    project_block(grad_out.view("U_i"), g.U_i);
    project_block(grad_out.view("U_f"), g.U_f);
    if (cfg.stable) {
      project_spectral(grad_out.view("U_g"), g.U_g, free.view("U_g"), mat.rescale);
    } else {
      project_block(grad_out.view("U_g"), g.U_g);
    }
    project_block(grad_out.view("U_o"), g.U_o);
    project_block(grad_out.view("W_i"), g.W_i);
    project_block(grad_out.view("W_f"), g.W_f);
    project_block(grad_out.view("W_g"), g.W_g);
    project_block(grad_out.view("W_o"), g.W_o);
    if (cfg.controls > 0) {
      project_block(grad_out.view("C_i"), g.C_i);
      project_block(grad_out.view("C_f"), g.C_f);
      if (!cfg.stable) project_block(grad_out.view("C_g"), g.C_g);
      project_block(grad_out.view("C_o"), g.C_o);
    }
    project_block(grad_out.view("b_i"), g.b_i);
    project_block(grad_out.view("b_f"), g.b_f);
    if (!cfg.stable) project_block(grad_out.view("b_g"), g.b_g);
    project_block(grad_out.view("b_o"), g.b_o);
  }
  project_block(grad_out.view("w_out"), total.w_out);
  grad_out.view("b_out")[0] += total.b_out;
}

void adam_step(FreeParams& params, const FreeParams& grads, AdamState& opt, double lr,
               double weight_decay) {
  if (params.values.size() != grads.values.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient shape mismatch");
  }
  if (opt.m.size() != params.values.size()) {
    throw std::invalid_argument("adam_step: optimizer state shape mismatch");
  }
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (size_t i = 0; i < params.values.size(); ++i) {
    const double g = grads.values[i] + weight_decay * params.values[i];
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
    const double mhat = opt.m[i] / bc1;
    const double vhat = opt.v[i] / bc2;
    params.values[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

FreeParams init_params(const ModelConfig& cfg, SeededRng& rng) {
  FreeParams fp = make_free_params(cfg);
  const int n = cfg.hidden;
  for (const auto& b : fp.blocks) {
    auto dst = fp.view(b);
    if (b.name[0] == 'U') {
      Matrix q = random_orthogonal(n, rng);
      for (size_t i = 0; i < dst.size(); ++i) dst[i] = 0.5 * q.a[i];
    } else if (b.name[0] == 'W') {
      for (auto& v : dst) v = rng.uniform(-1.0, 1.0);  // fan-in 1
    } else if (b.name[0] == 'C') {
      const double lim = 1.0 / std::sqrt(static_cast<double>(b.cols));
      for (auto& v : dst) v = rng.uniform(-lim, lim);
    } else if (b.name == "w_out") {
      const double lim = 1.0 / std::sqrt(static_cast<double>(n));
      for (auto& v : dst) v = rng.uniform(-lim, lim);
    }
    // biases and b_out stay zero
  }
  return fp;
}

double dataset_mae(const Model& m, const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("dataset_mae: empty dataset");
  double err_sum = 0.0;
  size_t count = 0;
  for (const auto& s : samples) {
    ControlTrajectory ct(static_cast<int>(s.input.size()), m.config.controls);
    for (int t = 0; t < ct.length; ++t) {
      auto r = ct.row(t);
      std::copy(s.controls.begin(), s.controls.end(), r.begin());
    }
    SequenceResult sr = run_sequence(m, m.zero_state(), s.input, ct);
    for (size_t t = 0; t < sr.output.size(); ++t) err_sum += std::fabs(sr.output[t] - s.target[t]);
    count += sr.output.size();
  }
  return err_sum / static_cast<double>(count);
}

TrainResult train(const ModelConfig& cfg, const StabilityMargin& margin, const TrainConfig& tc,
                  const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                  bool parallel_batch) {
  if (!(tc.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
  if (tc.tbptt_length < 1) throw std::invalid_argument("train: tbptt length must be >= 1");
  if (tc.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (tc.loss != "mae") throw std::invalid_argument("train: unsupported loss kind " + tc.loss);
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");

  SeededRng rng(tc.seed);
  SeededRng init_rng = rng.split(1);
  TrainResult res;
  res.final_params = init_params(cfg, init_rng);
  res.adam = AdamState(res.final_params.values.size());
  res.best_eval_mae = std::numeric_limits<double>::infinity();

  FreeParams grad = make_free_params(cfg);
  const size_t n_train = train_set.size();
  std::vector<size_t> order(n_train);
  std::iota(order.begin(), order.end(), size_t{0});

  const size_t batch_cap = std::min<size_t>(static_cast<size_t>(tc.batch_size), n_train);
  std::vector<ModelState> states(batch_cap);
  std::vector<ModelState> next_states(batch_cap);
  std::vector<CellGrads> per_elem;
  per_elem.reserve(batch_cap);
  for (size_t i = 0; i < batch_cap; ++i) per_elem.push_back(CellGrads::zeros(cfg));
  std::vector<double> losses(batch_cap, 0.0);
  std::vector<char> active(batch_cap, 0);
  std::vector<SegmentTask> tasks;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    // Fisher-Yates with a per-epoch stream
    SeededRng shuffle_rng = rng.split(1000 + static_cast<uint64_t>(epoch));
    for (size_t i = n_train; i > 1; --i) {
      const size_t j = shuffle_rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss_sum = 0.0;
    size_t epoch_steps = 0;
    for (size_t batch_start = 0; batch_start < n_train; batch_start += batch_cap) {
      const size_t b = std::min(batch_cap, n_train - batch_start);
      size_t max_len = 0;
      for (size_t i = 0; i < b; ++i) {
        const Sample& s = train_set[order[batch_start + i]];
        states[i] = ModelState{Vector(static_cast<size_t>(cfg.hidden), 0.0),
                               cfg.cell == CellKind::Lstm
                                   ? Vector(static_cast<size_t>(cfg.hidden), 0.0)
                                   : Vector{}};
        max_len = std::max(max_len, s.input.size());
      }

      for (size_t offset = 0; offset < max_len; offset += static_cast<size_t>(tc.tbptt_length)) {
        Materialized mat = materialize(cfg, margin, res.final_params, res.spectral);
        tasks.clear();
        std::fill(active.begin(), active.end(), 0);
        for (size_t i = 0; i < b; ++i) {
          const Sample& s = train_set[order[batch_start + i]];
          if (offset >= s.input.size()) continue;
          const size_t seg = std::min<size_t>(static_cast<size_t>(tc.tbptt_length),
                                              s.input.size() - offset);
          per_elem[i] = CellGrads::zeros(cfg);
          active[i] = 1;
          SegmentTask t;
          t.x = {s.input.data() + offset, seg};
          t.target = {s.target.data() + offset, seg};
          t.controls = s.controls;
          t.state_in = &states[i];
          t.state_out = &next_states[i];
          t.grads_out = &per_elem[i];
          t.loss_out = &losses[i];
          tasks.push_back(t);
        }
        if (tasks.empty()) break;
        run_segment_tasks(mat, tasks, parallel_batch);

        double step_loss = 0.0;
        size_t contributing = 0;
        for (size_t i = 0; i < b; ++i) {
          if (!active[i]) continue;
          step_loss += losses[i];
          ++contributing;
          states[i] = next_states[i];
        }
        step_loss /= static_cast<double>(contributing);
        if (!std::isfinite(step_loss)) {
          res.diverged = true;
          return res;
        }
        sum_and_project(cfg, mat, res.final_params, {per_elem.data(), b}, {active.data(), b},
                        grad);
        adam_step(res.final_params, grad, res.adam, tc.learning_rate, tc.weight_decay);
        res.total_steps += 1;
        epoch_loss_sum += step_loss;
        epoch_steps += 1;
      }
    }

    // End-of-epoch evaluation on a copy of the spectral state so the
    // training trajectory is independent of evaluation cadence.
    SpectralState eval_spectral = res.spectral;
    Materialized eval_mat = materialize(cfg, margin, res.final_params, eval_spectral);
    EpochRow row;
    row.epoch = epoch;
    row.train_mae = epoch_steps > 0 ? epoch_loss_sum / static_cast<double>(epoch_steps) : 0.0;
    row.eval_mae = eval_set.empty() ? row.train_mae : dataset_mae(eval_mat.model, eval_set);
    row.eval_mae_db = row.eval_mae > 0.0 ? 20.0 * std::log10(row.eval_mae)
                                         : -std::numeric_limits<double>::infinity();
    if (cfg.stable) {
      if (cfg.cell == CellKind::Gru) {
        row.constraints_pass = verify_gru(eval_mat.model.gru(), margin).all_pass;
      } else {
        row.constraints_pass = verify_lstm(eval_mat.model.lstm(), margin).all_pass;
      }
    }
    res.history.push_back(row);
    if (row.eval_mae < res.best_eval_mae) {
      res.best_eval_mae = row.eval_mae;
      res.best_epoch = epoch;
      res.best_params = res.final_params;
    }
  }
  if (res.best_epoch < 0) {
    res.best_params = res.final_params;
    res.best_eval_mae = std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

GradCheckReport gradient_check(const ModelConfig& cfg, const StabilityMargin& margin,
                               const FreeParams& at, const ModelState& state0,
                               std::span<const double> x, const ControlTrajectory& ctrl,
                               std::span<const double> target, double fd_step) {
  MaterializeOptions tight;
  tight.max_iters = 2000;
  tight.tol = 1e-13;

  auto loss_of = [&](const FreeParams& fp) {
    SpectralState st;
    Materialized mat = materialize(cfg, margin, fp, st, tight);
    SequenceResult sr = run_sequence(mat.model, state0, x, ctrl);
    return mae(sr.output, target);
  };

  SpectralState st;
  Materialized mat = materialize(cfg, margin, at, st, tight);
  SegmentResult seg = backward_segment(cfg, mat, at, state0, x, ctrl, target);

  GradCheckReport rep;
  FreeParams probe = at;
  for (const auto& block : at.blocks) {
    auto analytic = seg.grad.view(block);
    Vector fd(block.size());
    for (size_t j = 0; j < block.size(); ++j) {
      const size_t idx = block.offset + j;
      const double orig = probe.values[idx];
      probe.values[idx] = orig + fd_step;
      const double lp = loss_of(probe);
      probe.values[idx] = orig - fd_step;
      const double lm = loss_of(probe);
      probe.values[idx] = orig;
      fd[j] = (lp - lm) / (2.0 * fd_step);
    }
    double amax = 0.0;
    for (size_t j = 0; j < block.size(); ++j) {
      amax = std::max({amax, std::fabs(analytic[j]), std::fabs(fd[j])});
    }
    const double denom = std::max(amax, 1e-8);
    double worst = 0.0;
    for (size_t j = 0; j < block.size(); ++j) {
      worst = std::max(worst, std::fabs(analytic[j] - fd[j]) / denom);
    }
    rep.entries.push_back({block.name, worst});
    rep.worst = std::max(rep.worst, worst);
  }
  return rep;
}

}  // namespace varnn
