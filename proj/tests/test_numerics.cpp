#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "support/jacobi_svd.hpp"
#include "varnn/numerics.hpp"

using namespace varnn;

TEST_CASE("sigmoid basics") {
  CHECK(sigmoid({0.0}) == Vector{0.5});

  // saturation stays strictly inside the open interval
  Vector hi = sigmoid({1000.0});
  CHECK(hi[0] < 1.0);
  CHECK(1.0 - hi[0] < 1e-12);
  Vector lo = sigmoid({-1000.0});
  CHECK(lo[0] > 0.0);
  CHECK(lo[0] < 1e-12);

  // high-precision oracle values for 1/(1+e^{-x})
  Vector v = sigmoid({0.5, -0.5});
  CHECK(v[0] == doctest::Approx(0.62245933120185456464).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(0.37754066879814543536).epsilon(1e-15));

  CHECK_THROWS_AS(sigmoid({std::numeric_limits<double>::quiet_NaN()}), std::invalid_argument);
  CHECK_THROWS_AS(sigmoid({std::numeric_limits<double>::infinity()}), std::invalid_argument);
}

TEST_CASE("tanh_elem basics") {
  CHECK(tanh_elem({0.0, 0.0}) == Vector{0.0, 0.0});
  CHECK(tanh_elem({1.0})[0] == doctest::Approx(0.76159415595576488812).epsilon(1e-15));
  CHECK_THROWS_AS(tanh_elem({std::numeric_limits<double>::quiet_NaN()}), std::invalid_argument);

  Vector big = tanh_elem({50.0, -50.0});
  CHECK(big[0] < 1.0);
  CHECK(big[1] > -1.0);
}

TEST_CASE("tanh is norm-contractive over random vectors") {
  SeededRng rng(7);
  for (int trial = 0; trial < 10000; ++trial) {
    Vector v(8);
    for (auto& x : v) x = rng.uniform(-4.0, 4.0);
    Vector t = tanh_elem(v);
    CHECK(vec_norm(t, NormKind::L2) <= vec_norm(v, NormKind::L2));
    for (double x : t) {
      CHECK(x > -1.0);
      CHECK(x < 1.0);
    }
  }
}

TEST_CASE("sigmoid stays in the open interval over random vectors") {
  SeededRng rng(8);
  for (int trial = 0; trial < 10000; ++trial) {
    Vector v(4);
    for (auto& x : v) x = rng.uniform(-60.0, 60.0);
    for (double s : sigmoid(v)) {
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
  }
}

TEST_CASE("vec_norm") {
  CHECK(vec_norm(Vector{3.0, 4.0}, NormKind::L2) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(vec_norm(Vector{-3.0, 2.0}, NormKind::Linf) == 3.0);
  CHECK(vec_norm(Vector{0.0, 0.0, 0.0}, NormKind::L2) == 0.0);
  CHECK(vec_norm(Vector{0.0}, NormKind::Linf) == 0.0);
  // scaled accumulation keeps denormal-range vectors meaningful
  CHECK(vec_norm(Vector{1e-300, 1e-300}, NormKind::L2) ==
        doctest::Approx(std::sqrt(2.0) * 1e-300).epsilon(1e-12));
}

TEST_CASE("spectral norm: diagonal and rank-1") {
  Matrix d(2, 2);
  d(0, 0) = 0.5;
  d(1, 1) = 2.0;
  CHECK(spectral_norm(d) == doctest::Approx(2.0).epsilon(1e-9));

  SeededRng rng(3);
  Vector u(4), v(3);
  for (auto& x : u) x = rng.uniform(-1.0, 1.0);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  Matrix r1(4, 3);
  add_outer(r1, 1.0, u, v);
  const double expect = vec_norm(u, NormKind::L2) * vec_norm(v, NormKind::L2);
  CHECK(spectral_norm(r1) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("spectral norm matches the SVD oracle on a seeded 8x8 matrix") {
  SeededRng rng(42);
  Matrix m(8, 8);
  for (auto& x : m.a) x = rng.uniform(-1.0, 1.0);
  const double est = spectral_norm(m, 200, 1e-12);
  const double oracle = testsupport::svd_spectral_norm(m);
  CHECK(est == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("spectral norm edge cases and properties") {
  Matrix z(3, 3);
  CHECK(spectral_norm(z) == 0.0);
  CHECK_THROWS_AS(spectral_norm(Matrix{}), std::invalid_argument);
  CHECK_THROWS_AS(spectral_norm(z, 0, 1e-9), std::invalid_argument);
  CHECK_THROWS_AS(spectral_norm(z, 10, 0.0), std::invalid_argument);

  SeededRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix m(5, 5);
    for (auto& x : m.a) x = rng.uniform(-1.0, 1.0);
    const double s = spectral_norm(m, 500, 1e-12);

    // homogeneity
    const double c = rng.uniform(-3.0, 3.0);
    Matrix mc = m;
    for (auto& x : mc.a) x *= c;
    CHECK(spectral_norm(mc, 500, 1e-12) == doctest::Approx(std::fabs(c) * s).epsilon(1e-6));

    // induced-norm lower bound for arbitrary x
    Vector x(5);
    for (auto& w : x) w = rng.uniform(-1.0, 1.0);
    Vector y(5);
    matvec(m, x, y);
    CHECK(s >= vec_norm(y, NormKind::L2) / vec_norm(x, NormKind::L2) - 1e-9);
  }
}

TEST_CASE("warm-started power iteration tracks a slowly changing matrix") {
  SeededRng rng(5);
  Matrix m(6, 6);
  for (auto& x : m.a) x = rng.uniform(-1.0, 1.0);
  PowerIterState st;
  (void)spectral_norm(m, 200, 1e-12, st);
  for (int step = 0; step < 10; ++step) {
    for (auto& x : m.a) x += 1e-3 * rng.uniform(-1.0, 1.0);
    const double warm = spectral_norm(m, 30, 1e-11, st);
    CHECK(warm == doctest::Approx(testsupport::svd_spectral_norm(m)).epsilon(1e-8));
  }
}

TEST_CASE("seeded rng reproducibility") {
  SeededRng a(123456789), b(123456789);
  for (int i = 0; i < 1000000; ++i) {
    REQUIRE(a.next_u64() == b.next_u64());
  }
}

TEST_CASE("seeded rng streams and ranges") {
  SeededRng base(99);
  SeededRng s1 = base.split(1);
  SeededRng s2 = base.split(2);
  CHECK(s1.next_u64() != s2.next_u64());

  // split depends only on the seed, not on draws
  SeededRng base2(99);
  (void)base2.uniform();
  SeededRng s1b = base2.split(1);
  SeededRng s1c = SeededRng(99).split(1);
  CHECK(s1b.next_u64() == s1c.next_u64());

  SeededRng r(4);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = r.uniform(-2.0, 3.0);
    CHECK(v >= -2.0);
    CHECK(v < 3.0);
  }
}

TEST_CASE("random orthogonal matrices") {
  SeededRng rng(17);
  for (int n : {1, 2, 5, 16}) {
    Matrix q = random_orthogonal(n, rng);
    // Q^T Q = I
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double d = 0.0;
        for (int k = 0; k < n; ++k) d += q(k, i) * q(k, j);
        if (i == j) {
          CHECK(d == doctest::Approx(1.0).epsilon(1e-12));
        } else {
          CHECK(std::fabs(d) < 1e-12);
        }
      }
    }
    CHECK(spectral_norm(q, 500, 1e-12) == doctest::Approx(1.0).epsilon(1e-10));
  }
}
