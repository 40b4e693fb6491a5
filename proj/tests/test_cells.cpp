#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "support/reference_cells.hpp"
#include "varnn/cells.hpp"
#include "varnn/constraints.hpp"
#include "varnn/training.hpp"

using namespace varnn;

namespace {

GruParams gru_fixture() {
  GruParams g(2, 1);
  g.U_r(0, 0) = 0.20; g.U_r(0, 1) = -0.10; g.U_r(1, 0) = 0.05; g.U_r(1, 1) = 0.30;
  g.U_z(0, 0) = -0.15; g.U_z(0, 1) = 0.25; g.U_z(1, 0) = 0.10; g.U_z(1, 1) = -0.05;
  g.U_n(0, 0) = 0.40; g.U_n(0, 1) = 0.12; g.U_n(1, 0) = -0.20; g.U_n(1, 1) = 0.33;
  g.W_r = {0.10, -0.30}; g.W_z = {0.20, 0.15}; g.W_n = {-0.25, 0.10};
  g.C_r(0, 0) = 0.30; g.C_r(1, 0) = -0.20;
  g.C_z(0, 0) = 0.10; g.C_z(1, 0) = 0.40;
  g.C_n(0, 0) = -0.35; g.C_n(1, 0) = 0.25;
  g.b_r = {0.01, -0.02}; g.b_z = {0.03, 0.02}; g.b_n = {-0.01, 0.04};
  return g;
}

LstmParams lstm_fixture() {
  LstmParams l(2, 1);
  l.U_i(0, 0) = 0.15; l.U_i(0, 1) = -0.22; l.U_i(1, 0) = 0.08; l.U_i(1, 1) = 0.19;
  l.U_f(0, 0) = -0.12; l.U_f(0, 1) = 0.27; l.U_f(1, 0) = 0.21; l.U_f(1, 1) = -0.09;
  l.U_g(0, 0) = 0.31; l.U_g(0, 1) = 0.14; l.U_g(1, 0) = -0.17; l.U_g(1, 1) = 0.26;
  l.U_o(0, 0) = 0.05; l.U_o(0, 1) = -0.16; l.U_o(1, 0) = 0.23; l.U_o(1, 1) = 0.11;
  l.W_i = {0.12, -0.18}; l.W_f = {0.07, 0.24}; l.W_g = {-0.21, 0.13}; l.W_o = {0.16, -0.06};
  l.C_i(0, 0) = 0.28; l.C_i(1, 0) = -0.14;
  l.C_f(0, 0) = 0.09; l.C_f(1, 0) = 0.33;
  l.C_g(0, 0) = -0.26; l.C_g(1, 0) = 0.18;
  l.C_o(0, 0) = 0.22; l.C_o(1, 0) = -0.08;
  l.b_i = {0.02, -0.01}; l.b_f = {0.04, 0.03}; l.b_g = {-0.03, 0.01}; l.b_o = {0.01, 0.05};
  return l;
}

Model random_stable_gru(uint64_t seed, int hidden, int controls) {
  ModelConfig cfg;
  cfg.cell = CellKind::Gru;
  cfg.hidden = hidden;
  cfg.controls = controls;
  cfg.stable = true;
  SeededRng rng(seed);
  FreeParams fp = init_params(cfg, rng);
  // spread the biases and gains so the draw is not just the init scheme
  for (auto& b : fp.blocks) {
    if (b.name == "b_r" || b.name == "b_z") {
      for (auto& v : fp.view(b)) v = rng.uniform(-1.0, 1.0);
    }
  }
  return materialize_fresh(cfg, StabilityMargin{}, fp).model;
}

}  // namespace

TEST_CASE("gru_step with all-zero parameters halves the state") {
  GruParams g(3, 0);
  GruState s{{0.4, -0.8, 0.2}};
  GruState out = gru_step(g, s, 0.0, {});
  for (int i = 0; i < 3; ++i) {
    CHECK(out.h[static_cast<size_t>(i)] == 0.5 * s.h[static_cast<size_t>(i)]);
  }
}

TEST_CASE("gru_step matches the scalar reference on the hand fixture") {
  GruParams g = gru_fixture();
  Vector h{0.1, -0.2};
  GruState out = gru_step(g, GruState{h}, 0.3, {1.0});
  Vector ref = testsupport::ref_gru_step(g, h, 0.3, {1.0});
  CHECK(out.h[0] == doctest::Approx(ref[0]).epsilon(1e-14));
  CHECK(out.h[1] == doctest::Approx(ref[1]).epsilon(1e-14));
  // frozen regression values
  CHECK(out.h[0] == doctest::Approx(-0.13338230401049525).epsilon(1e-14));
  CHECK(out.h[1] == doctest::Approx(-0.019408585861966685).epsilon(1e-14));
}

TEST_CASE("gru zero state is an equilibrium under the stability constraints") {
  GruParams g = gru_fixture();
  // apply the structural constraints by hand
  g.C_n(0, 0) = 0.0;
  g.C_n(1, 0) = 0.0;
  g.b_n = {0.0, 0.0};
  GruState out = gru_step(g, GruState{{0.0, 0.0}}, 0.0, {0.7});
  CHECK(out.h[0] == 0.0);
  CHECK(out.h[1] == 0.0);
}

TEST_CASE("lstm_step with all-zero parameters") {
  LstmParams l(2, 0);
  LstmState s{{0.0, 0.0}, {1.0, 1.0}};
  LstmState out = lstm_step(l, GateMode::standard(), s, 0.0, {});
  const double expect_h = 0.5 * std::tanh(0.5);
  for (int i = 0; i < 2; ++i) {
    CHECK(out.c[static_cast<size_t>(i)] == 0.5);
    CHECK(out.h[static_cast<size_t>(i)] == doctest::Approx(expect_h).epsilon(1e-15));
  }
}

TEST_CASE("lstm_step matches the scalar reference on the hand fixture") {
  LstmParams l = lstm_fixture();
  Vector h{0.1, -0.2}, c{0.3, -0.1};

  LstmState out = lstm_step(l, GateMode::standard(), LstmState{h, c}, 0.3, {1.0});
  auto ref = testsupport::ref_lstm_step(l, GateMode::standard(), h, c, 0.3, {1.0});
  CHECK(out.h[0] == doctest::Approx(ref.h[0]).epsilon(1e-14));
  CHECK(out.h[1] == doctest::Approx(ref.h[1]).epsilon(1e-14));
  CHECK(out.c[0] == doctest::Approx(ref.c[0]).epsilon(1e-14));
  CHECK(out.c[1] == doctest::Approx(ref.c[1]).epsilon(1e-14));
  CHECK(out.h[0] == doctest::Approx(-0.025771277904768328).epsilon(1e-14));
  CHECK(out.h[1] == doctest::Approx(0.00416146350510833).epsilon(1e-14));
  CHECK(out.c[0] == doctest::Approx(-0.044608435223390613).epsilon(1e-14));
  CHECK(out.c[1] == doctest::Approx(0.0085233913918128859).epsilon(1e-14));

  GateMode coupled = GateMode::coupled_stable(1e-3);
  LstmState out2 = lstm_step(l, coupled, LstmState{h, c}, 0.3, {1.0});
  auto ref2 = testsupport::ref_lstm_step(l, coupled, h, c, 0.3, {1.0});
  CHECK(out2.c[0] == doctest::Approx(ref2.c[0]).epsilon(1e-14));
  CHECK(out2.c[1] == doctest::Approx(ref2.c[1]).epsilon(1e-14));
  CHECK(out2.c[0] == doctest::Approx(0.060245833149085992).epsilon(1e-14));
  CHECK(out2.c[1] == doctest::Approx(-0.034649571386131499).epsilon(1e-14));
}

TEST_CASE("coupled gates keep f + i below one over random draws") {
  SeededRng rng(21);
  LstmParams l(4, 2);
  for (auto m : {&l.U_i, &l.U_f, &l.U_g, &l.U_o, &l.C_i, &l.C_f, &l.C_g, &l.C_o}) {
    for (auto& v : m->a) v = rng.uniform(-2.0, 2.0);
  }
  for (auto v : {&l.W_i, &l.W_f, &l.W_g, &l.W_o, &l.b_i, &l.b_f, &l.b_g, &l.b_o}) {
    for (auto& x : *v) x = rng.uniform(-2.0, 2.0);
  }
  GateMode mode = GateMode::coupled_stable(1e-3);
  Vector h(4), c(4), ctrl(2), ig(4), fg(4), gg(4), og(4), sg(4), ho(4), co(4);
  for (int trial = 0; trial < 10000; ++trial) {
    for (auto& v : h) v = rng.uniform(-1.0, 1.0);
    for (auto& v : c) v = rng.uniform(-3.0, 3.0);
    for (auto& v : ctrl) v = rng.uniform(-1.0, 1.0);
    lstm_step_core(l, mode, h, c, rng.uniform(-1.0, 1.0), ctrl, ig, fg, gg, og, sg, ho, co);
    for (int k = 0; k < 4; ++k) {
      REQUIRE(fg[static_cast<size_t>(k)] + ig[static_cast<size_t>(k)] < 1.0);
    }
  }
}

TEST_CASE("model_step output layer") {
  ModelConfig cfg;
  cfg.cell = CellKind::Gru;
  cfg.hidden = 2;
  cfg.controls = 1;
  Model m;
  m.config = cfg;
  m.cell = gru_fixture();
  m.out.w_out = {0.0, 0.0};
  m.out.b_out = 0.3;
  m.out.skip_gain = 0.0;

  ModelState st = m.zero_state();
  st.h = {0.5, -0.4};
  CHECK(model_step(m, st, 0.9, Vector{0.2}) == 0.3);

  m.out.b_out = 0.0;
  m.out.skip_gain = 1.0;
  ModelState st2 = m.zero_state();
  CHECK(model_step(m, st2, 0.7, Vector{0.2}) == 0.7);

  // fixture readout against the reference transcription
  m.out.w_out = {0.6, -0.3};
  m.out.b_out = 0.05;
  m.out.skip_gain = 1.0;
  ModelState st3 = m.zero_state();
  st3.h = {0.1, -0.2};
  const double y = model_step(m, st3, 0.3, Vector{1.0});
  Vector ref = testsupport::ref_gru_step(m.gru(), {0.1, -0.2}, 0.3, {1.0});
  const double y_ref = 0.6 * ref[0] - 0.3 * ref[1] + 0.05 + 0.3;
  CHECK(y == doctest::Approx(y_ref).epsilon(1e-14));
}

TEST_CASE("run_sequence basics") {
  ModelConfig cfg;
  cfg.cell = CellKind::Gru;
  cfg.hidden = 2;
  cfg.controls = 1;
  Model m;
  m.config = cfg;
  m.cell = gru_fixture();
  m.out.w_out = {0.6, -0.3};
  m.out.b_out = 0.0;
  m.out.skip_gain = 1.0;

  SUBCASE("length zero leaves the state untouched") {
    ModelState st = m.zero_state();
    st.h = {0.3, -0.1};
    SequenceResult r = run_sequence(m, st, {}, ControlTrajectory(0, 1));
    CHECK(r.output.empty());
    CHECK(r.final_state.h == st.h);
  }

  SUBCASE("matches step-at-a-time composition bit for bit") {
    SeededRng rng(33);
    const int T = 1024;
    std::vector<double> x(T);
    ControlTrajectory ct(T, 1);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : ct.data) v = rng.uniform(0.0, 1.0);

    SequenceResult r = run_sequence(m, m.zero_state(), x, ct);
    ModelState st = m.zero_state();
    for (int t = 0; t < T; ++t) {
      const double y = model_step(m, st, x[static_cast<size_t>(t)], ct.row(t));
      REQUIRE(y == r.output[static_cast<size_t>(t)]);
    }
    CHECK(st.h == r.final_state.h);
  }

  SUBCASE("repeated calls agree bitwise") {
    SeededRng rng(34);
    std::vector<double> x(256);
    ControlTrajectory ct(256, 1);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : ct.data) v = rng.uniform(0.0, 1.0);
    SequenceResult a = run_sequence(m, m.zero_state(), x, ct);
    SequenceResult b = run_sequence(m, m.zero_state(), x, ct);
    CHECK(a.output == b.output);
    CHECK(a.final_state.h == b.final_state.h);
  }

  SUBCASE("length mismatch is a configuration error") {
    std::vector<double> x(10);
    CHECK_THROWS_AS(run_sequence(m, m.zero_state(), x, ControlTrajectory(9, 1)),
                    std::invalid_argument);
  }
}

TEST_CASE("dimension mismatches are configuration errors") {
  GruParams g(3, 2);
  CHECK_THROWS_AS(gru_step(g, GruState{{0.0, 0.0}}, 0.0, {0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(gru_step(g, GruState{{0.0, 0.0, 0.0}}, 0.0, {0.0}), std::invalid_argument);
  LstmParams l(2, 1);
  CHECK_THROWS_AS(lstm_step(l, GateMode::standard(), LstmState{{0.0, 0.0}, {0.0}}, 0.0, {0.0}),
                  std::invalid_argument);
}

TEST_CASE("autonomous stable GRU decays monotonically") {
  SeededRng rng(55);
  for (int inst = 0; inst < 20; ++inst) {
    Model m = random_stable_gru(1000 + static_cast<uint64_t>(inst), 8, 3);
    ControlTrajectory ct(500, 3);
    for (auto& v : ct.data) v = rng.uniform(-1.0, 1.0);
    ModelState st = m.zero_state();
    for (auto& v : st.h) v = rng.uniform(-1.0, 1.0);
    double prev = vec_norm(st.h, NormKind::L2);
    AutonomousTrace tr = autonomous_run(m, st, ct);
    for (double nm : tr.h_norms) {
      if (prev <= 1e-300) break;
      REQUIRE(nm < prev);
      prev = nm;
    }
  }
}

TEST_CASE("autonomous unconstrained GRU with a large n-gate bias holds a DC equilibrium") {
  GruParams g(4, 1);
  SeededRng rng(77);
  Matrix q = random_orthogonal(4, rng);
  for (size_t i = 0; i < q.a.size(); ++i) g.U_n.a[i] = 0.4 * q.a[i];
  for (auto& v : g.b_n) v = 1.0;

  ModelConfig cfg;
  cfg.cell = CellKind::Gru;
  cfg.hidden = 4;
  cfg.controls = 1;
  Model m;
  m.config = cfg;
  m.cell = g;
  m.out.w_out = {0.25, 0.25, 0.25, 0.25};
  m.out.skip_gain = 0.0;

  ControlTrajectory ct(50000, 1);  // controls pinned at 0
  AutonomousTrace tr = autonomous_run(m, m.zero_state(), ct);
  const double final_norm = tr.h_norms.back();
  CHECK(final_norm > 0.01);
  // settled: consecutive norms agree tightly
  CHECK(std::fabs(tr.h_norms[tr.h_norms.size() - 1] - tr.h_norms[tr.h_norms.size() - 2]) < 1e-12);
}

TEST_CASE("autonomous run from the origin stays at the origin for stable params") {
  Model m = random_stable_gru(4242, 6, 2);
  ControlTrajectory ct(200, 2);
  SeededRng rng(88);
  for (auto& v : ct.data) v = rng.uniform(-1.0, 1.0);
  AutonomousTrace tr = autonomous_run(m, m.zero_state(), ct);
  for (double nm : tr.h_norms) CHECK(nm == 0.0);
  for (double y : tr.output) CHECK(y == m.out.b_out);
}

TEST_CASE("gru convex-combination bound") {
  SeededRng rng(91);
  GruParams g(4, 2);
  for (auto mtx : {&g.U_r, &g.U_z, &g.U_n, &g.C_r, &g.C_z, &g.C_n}) {
    for (auto& v : mtx->a) v = rng.uniform(-1.5, 1.5);
  }
  for (auto vec : {&g.W_r, &g.W_z, &g.W_n, &g.b_r, &g.b_z, &g.b_n}) {
    for (auto& v : *vec) v = rng.uniform(-1.0, 1.0);
  }
  Vector r(4), z(4), ng(4), hn(4);
  for (int trial = 0; trial < 2000; ++trial) {
    Vector h(4), ctrl(2);
    for (auto& v : h) v = rng.uniform(-1.0, 1.0);
    for (auto& v : ctrl) v = rng.uniform(-1.0, 1.0);
    gru_step_core(g, h, rng.uniform(-1.0, 1.0), ctrl, r, z, ng, hn);
    for (int k = 0; k < 4; ++k) {
      const size_t i = static_cast<size_t>(k);
      REQUIRE(std::fabs(hn[i]) <=
              std::max(std::fabs(ng[i]), std::fabs(h[i])) + 1e-15);
    }
  }
}

TEST_CASE("lstm hidden state stays inside the unit box") {
  SeededRng rng(92);
  LstmParams l(4, 1);
  for (auto mtx : {&l.U_i, &l.U_f, &l.U_g, &l.U_o, &l.C_i, &l.C_f, &l.C_g, &l.C_o}) {
    for (auto& v : mtx->a) v = rng.uniform(-2.0, 2.0);
  }
  for (auto vec : {&l.W_i, &l.W_f, &l.W_g, &l.W_o, &l.b_i, &l.b_f, &l.b_g, &l.b_o}) {
    for (auto& v : *vec) v = rng.uniform(-2.0, 2.0);
  }
  LstmState st{{0.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}};
  for (int t = 0; t < 2000; ++t) {
    st = lstm_step(l, GateMode::standard(), st, rng.uniform(-1.0, 1.0), {rng.uniform(-1.0, 1.0)});
    for (double v : st.h) {
      REQUIRE(v > -1.0);
      REQUIRE(v < 1.0);
    }
  }
}
