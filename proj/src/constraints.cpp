#include "varnn/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace varnn {

const ParamBlock* FreeParams::find(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

std::span<const double> FreeParams::view(const std::string& name) const {
  const ParamBlock* b = find(name);
  if (!b) throw std::invalid_argument("FreeParams: no block named " + name);
  return view(*b);
}

std::span<double> FreeParams::view(const std::string& name) {
  const ParamBlock* b = find(name);
  if (!b) throw std::invalid_argument("FreeParams: no block named " + name);
  return view(*b);
}

static void push_block(FreeParams& fp, const std::string& name, int rows, int cols) {
  ParamBlock b;
  b.name = name;
  b.rows = rows;
  b.cols = cols;
  b.offset = fp.values.size();
  fp.values.resize(fp.values.size() + b.size(), 0.0);
  fp.blocks.push_back(std::move(b));
}

FreeParams make_free_params(const ModelConfig& cfg) {
  const int n = cfg.hidden;
  const int p = cfg.controls;
  FreeParams fp;
  if (cfg.cell == CellKind::Gru) {
    push_block(fp, "U_r", n, n);
    push_block(fp, "U_z", n, n);
    push_block(fp, "U_n", n, n);  // holds the unconstrained matrix for stable models
    push_block(fp, "W_r", n, 1);
    push_block(fp, "W_z", n, 1);
    push_block(fp, "W_n", n, 1);
    if (p > 0) {
      push_block(fp, "C_r", n, p);
      push_block(fp, "C_z", n, p);
      if (!cfg.stable) push_block(fp, "C_n", n, p);
    }
    push_block(fp, "b_r", n, 1);
    push_block(fp, "b_z", n, 1);
    if (!cfg.stable) push_block(fp, "b_n", n, 1);
  } else {
    push_block(fp, "U_i", n, n);
    push_block(fp, "U_f", n, n);
    push_block(fp, "U_g", n, n);
    push_block(fp, "U_o", n, n);
    push_block(fp, "W_i", n, 1);
    push_block(fp, "W_f", n, 1);
    push_block(fp, "W_g", n, 1);
    push_block(fp, "W_o", n, 1);
    if (p > 0) {
      push_block(fp, "C_i", n, p);
      push_block(fp, "C_f", n, p);
      if (!cfg.stable) push_block(fp, "C_g", n, p);
      push_block(fp, "C_o", n, p);
    }
    push_block(fp, "b_i", n, 1);
    push_block(fp, "b_f", n, 1);
    if (!cfg.stable) push_block(fp, "b_g", n, 1);
    push_block(fp, "b_o", n, 1);
  }
  push_block(fp, "w_out", n, 1);
  push_block(fp, "b_out", 1, 1);
  return fp;
}

static void copy_matrix(const FreeParams& fp, const std::string& name, Matrix& dst) {
  auto src = fp.view(name);
  std::copy(src.begin(), src.end(), dst.a.begin());
}

static void copy_vector(const FreeParams& fp, const std::string& name, Vector& dst) {
  auto src = fp.view(name);
  std::copy(src.begin(), src.end(), dst.begin());
}

// U = Ufree * min(1, (1 - eps) / sigma_est(Ufree)), singular vectors warm-started
static SpectralRescale rescale_spectral(Matrix& u_mat, double eps, SpectralState& spectral,
                                        const MaterializeOptions& opts) {
  SpectralRescale rs;
  rs.sigma = spectral_norm(u_mat, opts.max_iters, opts.tol, spectral.pi);
  rs.u = spectral.pi.u;
  rs.v = spectral.pi.v;
  const double limit = 1.0 - eps;
  if (rs.sigma > limit) {
    rs.applied = true;
    rs.scale = limit / rs.sigma;
    for (auto& w : u_mat.a) w *= rs.scale;
  }
  return rs;
}

Materialized materialize(const ModelConfig& cfg, const StabilityMargin& margin,
                         const FreeParams& fp, SpectralState& spectral,
                         const MaterializeOptions& opts) {
  if (!all_finite(fp.values)) {
    throw std::invalid_argument("materialize: non-finite free parameter");
  }
  Materialized mat;
  mat.model.config = cfg;
  const int n = cfg.hidden;
  const int p = cfg.controls;

  if (cfg.cell == CellKind::Gru) {
    GruParams gp(n, p);
    copy_matrix(fp, "U_r", gp.U_r);
    copy_matrix(fp, "U_z", gp.U_z);
    copy_matrix(fp, "U_n", gp.U_n);
    copy_vector(fp, "W_r", gp.W_r);
    copy_vector(fp, "W_z", gp.W_z);
    copy_vector(fp, "W_n", gp.W_n);
    if (p > 0) {
      copy_matrix(fp, "C_r", gp.C_r);
      copy_matrix(fp, "C_z", gp.C_z);
      if (!cfg.stable) copy_matrix(fp, "C_n", gp.C_n);
    }
    copy_vector(fp, "b_r", gp.b_r);
    copy_vector(fp, "b_z", gp.b_z);
    if (!cfg.stable) copy_vector(fp, "b_n", gp.b_n);
    if (cfg.stable) {
      mat.rescale = rescale_spectral(gp.U_n, margin.spectral, spectral, opts);
      // C_n and b_n stay as constructed: exact zeros.
    }
    mat.model.cell = std::move(gp);
  } else {
    LstmParams lp(n, p);
    copy_matrix(fp, "U_i", lp.U_i);
    copy_matrix(fp, "U_f", lp.U_f);
    copy_matrix(fp, "U_g", lp.U_g);
    copy_matrix(fp, "U_o", lp.U_o);
    copy_vector(fp, "W_i", lp.W_i);
    copy_vector(fp, "W_f", lp.W_f);
    copy_vector(fp, "W_g", lp.W_g);
    copy_vector(fp, "W_o", lp.W_o);
    if (p > 0) {
      copy_matrix(fp, "C_i", lp.C_i);
      copy_matrix(fp, "C_f", lp.C_f);
      if (!cfg.stable) copy_matrix(fp, "C_g", lp.C_g);
      copy_matrix(fp, "C_o", lp.C_o);
    }
    copy_vector(fp, "b_i", lp.b_i);
    copy_vector(fp, "b_f", lp.b_f);
    if (!cfg.stable) copy_vector(fp, "b_g", lp.b_g);
    copy_vector(fp, "b_o", lp.b_o);
    if (cfg.stable) {
      mat.rescale = rescale_spectral(lp.U_g, margin.spectral, spectral, opts);
    }
    mat.model.cell = std::move(lp);
  }

  mat.model.out.w_out.assign(static_cast<size_t>(n), 0.0);
  copy_vector(fp, "w_out", mat.model.out.w_out);
  mat.model.out.b_out = fp.view("b_out")[0];
  mat.model.out.skip_gain = cfg.skip_gain;
  // Stable LSTMs always run with the coupled gate.
  if (cfg.cell == CellKind::Lstm && cfg.stable) {
    mat.model.config.gate_mode = GateMode::coupled_stable(margin.gate);
  }
  return mat;
}

Materialized materialize_fresh(const ModelConfig& cfg, const StabilityMargin& margin,
                               const FreeParams& fp) {
  SpectralState st;
  MaterializeOptions opts;
  opts.max_iters = 1000;
  opts.tol = 1e-13;
  return materialize(cfg, margin, fp, st, opts);
}

void ConstraintReport::add(const std::string& name, double measured, double limit, bool pass) {
  checks.push_back({name, measured, limit, pass});
  all_pass = all_pass && pass;
}

static double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v));
  return m;
}

// Re-measures the spectral norm with a tight, independent power iteration
// rather than trusting the estimate the parametrization used.
static double measured_norm(const Matrix& m) { return spectral_norm(m, 2000, 1e-12); }

ConstraintReport verify_gru(const GruParams& params, const StabilityMargin& margin) {
  ConstraintReport rep;
  const double cmax = params.controls > 0 ? max_abs(params.C_n.a) : 0.0;
  rep.add("C_n_zero", cmax, 0.0, cmax == 0.0);
  const double bmax = max_abs(params.b_n);
  rep.add("b_n_zero", bmax, 0.0, bmax == 0.0);
  const double sn = measured_norm(params.U_n);
  const double limit = 1.0 - margin.spectral + 1e-9;
  rep.add("U_n_spectral_norm", sn, limit, sn <= limit);
  return rep;
}

ConstraintReport verify_lstm(const LstmParams& params, const StabilityMargin& margin) {
  ConstraintReport rep;
  const double cmax = params.controls > 0 ? max_abs(params.C_g.a) : 0.0;
  rep.add("C_g_zero", cmax, 0.0, cmax == 0.0);
  const double bmax = max_abs(params.b_g);
  rep.add("b_g_zero", bmax, 0.0, bmax == 0.0);
  const double sn = measured_norm(params.U_g);
  const double limit = 1.0 - margin.spectral + 1e-9;
  rep.add("U_g_spectral_norm", sn, limit, sn <= limit);
  return rep;
}

double verify_lstm_gate_bound(const LstmParams& params, GateMode mode, int n_samples,
                              SeededRng& rng) {
  if (n_samples < 1) throw std::invalid_argument("verify_lstm_gate_bound: n_samples must be >= 1");
  const size_t n = static_cast<size_t>(params.hidden);
  const size_t p = static_cast<size_t>(params.controls);
  Vector h(n), c(n), ctrl(p);
  Vector ig(n), fg(n), gg(n), og(n), sg(n), h_out(n), c_out(n);
  double worst = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    for (auto& v : h) v = rng.uniform(-1.0, 1.0);
    for (auto& v : c) v = rng.uniform(-3.0, 3.0);
    for (auto& v : ctrl) v = rng.uniform(-1.0, 1.0);
    const double x = rng.uniform(-1.0, 1.0);
    lstm_step_core(params, mode, h, c, x, ctrl, ig, fg, gg, og, sg, h_out, c_out);
    for (size_t k = 0; k < n; ++k) worst = std::max(worst, fg[k] + ig[k]);
  }
  return worst;
}

}  // namespace varnn
