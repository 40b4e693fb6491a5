#include "varnn/numerics.hpp"

#include <algorithm>
#include <stdexcept>

namespace varnn {

bool all_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

static void require_finite(const Vector& x, const char* op) {
  if (!all_finite(x)) {
    throw std::invalid_argument(std::string(op) + ": non-finite input value");
  }
}

Vector sigmoid(const Vector& x) {
  require_finite(x, "sigmoid");
  Vector y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
  return y;
}

Vector tanh_elem(const Vector& x) {
  require_finite(x, "tanh_elem");
  Vector y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = tanh_scalar(x[i]);
  return y;
}

double vec_norm(std::span<const double> x, NormKind kind) {
  if (kind == NormKind::Linf) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::fabs(v));
    return m;
  }
  // L2 with max-abs scaling so norms survive down to the denormal range.
  double amax = 0.0;
  for (double v : x) amax = std::max(amax, std::fabs(v));
  if (amax == 0.0) return 0.0;
  double s = 0.0;
  for (double v : x) {
    const double t = v / amax;
    s += t * t;
  }
  return amax * std::sqrt(s);
}

void matvec(const Matrix& m, std::span<const double> x, std::span<double> y) {
  const double* a = m.a.data();
  for (int r = 0; r < m.rows; ++r) {
    double s = 0.0;
    const double* row = a + static_cast<size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

void matvec_t(const Matrix& m, std::span<const double> x, std::span<double> y) {
  for (int c = 0; c < m.cols; ++c) y[c] = 0.0;
  const double* a = m.a.data();
  for (int r = 0; r < m.rows; ++r) {
    const double xr = x[r];
    const double* row = a + static_cast<size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
}

void add_outer(Matrix& m, double alpha, std::span<const double> u, std::span<const double> v) {
  for (int r = 0; r < m.rows; ++r) {
    const double ur = alpha * u[r];
    double* row = m.a.data() + static_cast<size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) row[c] += ur * v[c];
  }
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.a.size(); ++i) s += a.a[i] * b.a[i];
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

static double power_iterate(const Matrix& m, int max_iters, double tol, Vector& u, Vector& v) {
  Vector au(static_cast<size_t>(m.rows));
  Vector av(static_cast<size_t>(m.cols));
  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    matvec(m, v, au);
    const double nu = vec_norm(au, NormKind::L2);
    if (nu == 0.0) return 0.0;
    for (int i = 0; i < m.rows; ++i) u[i] = au[i] / nu;

    matvec_t(m, u, av);
    const double nv = vec_norm(av, NormKind::L2);
    if (nv == 0.0) return 0.0;
    for (int i = 0; i < m.cols; ++i) v[i] = av[i] / nv;

    const double prev = sigma;
    sigma = nv;
    if (it > 0 && std::fabs(sigma - prev) <= tol * std::max(sigma, 1.0)) break;
  }
  return sigma;
}

double spectral_norm(const Matrix& m, int max_iters, double tol, PowerIterState& state) {
  if (m.empty()) throw std::invalid_argument("spectral_norm: empty matrix");
  if (max_iters < 1) throw std::invalid_argument("spectral_norm: max_iters must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("spectral_norm: tol must be > 0");

  if (!state.initialized || static_cast<int>(state.v.size()) != m.cols ||
      static_cast<int>(state.u.size()) != m.rows) {
    state.u.assign(static_cast<size_t>(m.rows), 0.0);
    state.v.assign(static_cast<size_t>(m.cols), 1.0 / std::sqrt(static_cast<double>(m.cols)));
    state.initialized = true;
  }
  return power_iterate(m, max_iters, tol, state.u, state.v);
}

double spectral_norm(const Matrix& m, int max_iters, double tol) {
  PowerIterState s;
  return spectral_norm(m, max_iters, tol, s);
}

// splitmix64, used for seeding and stream derivation
static uint64_t splitmix64(uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SeededRng::SeededRng(uint64_t seed) : seed_(seed) {
  uint64_t x = seed;
  for (auto& w : s_) w = splitmix64(x);
}

SeededRng SeededRng::split(uint64_t stream) const {
  uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
  return SeededRng(splitmix64(x));
}

static inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

uint64_t SeededRng::next_u64() {
  // xoshiro256**
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double SeededRng::normal() {
  // Box-Muller without caching; one value per call keeps state trivial.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

uint64_t SeededRng::uniform_index(uint64_t n) {
  // rejection sampling to stay unbiased
  const uint64_t limit = n * (UINT64_MAX / n);
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

void SeededRng::set_state(const uint64_t st[4]) {
  for (int i = 0; i < 4; ++i) s_[i] = st[i];
}

Matrix random_orthogonal(int n, SeededRng& rng) {
  Matrix g(n, n);
  for (auto& v : g.a) v = rng.normal();

  // Modified Gram-Schmidt on columns, run twice.
  Matrix q = g;
  Vector diag_sign(static_cast<size_t>(n), 1.0);
  for (int pass = 0; pass < 2; ++pass) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < j; ++k) {
        double d = 0.0;
        for (int i = 0; i < n; ++i) d += q(i, k) * q(i, j);
        for (int i = 0; i < n; ++i) q(i, j) -= d * q(i, k);
      }
      double nrm = 0.0;
      for (int i = 0; i < n; ++i) nrm += q(i, j) * q(i, j);
      nrm = std::sqrt(nrm);
      if (pass == 1) {
        // sign of R diagonal (q_j . g_j) fixes the Haar distribution
        double d = 0.0;
        for (int i = 0; i < n; ++i) d += q(i, j) * g(i, j);
        diag_sign[j] = (d < 0.0) ? -1.0 : 1.0;
      }
      for (int i = 0; i < n; ++i) q(i, j) /= nrm;
    }
  }
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) q(i, j) *= diag_sign[j];
  }
  return q;
}

}  // namespace varnn
