// Minimal deterministic linear algebra, elementwise nonlinearities, norms,
// and seeded RNG. Everything is 64-bit float; no global state anywhere.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace varnn {

using Vector = std::vector<double>;

// Dense row-major matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  bool empty() const { return rows == 0 || cols == 0; }
};

// Scalar nonlinearities shared by the vector API and the cell inner loops.
// Outputs are clamped to the open interval so the (0,1) / (-1,1) contracts
// hold even where exp() underflows.
inline double sigmoid_scalar(double x) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - 1.1102230246251565e-16;  // nextafter(1,0)
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  if (s < lo) return lo;
  if (s > hi) return hi;
  return s;
}

inline double tanh_scalar(double x) {
  constexpr double hi = 1.0 - 1.1102230246251565e-16;
  double t = std::tanh(x);
  if (t > hi) return hi;
  if (t < -hi) return -hi;
  return t;
}

Vector sigmoid(const Vector& x);
Vector tanh_elem(const Vector& x);

enum class NormKind { L2, Linf };
double vec_norm(std::span<const double> x, NormKind kind);
inline double vec_norm(const Vector& x, NormKind kind) {
  return vec_norm(std::span<const double>(x), kind);
}

// y = A x
void matvec(const Matrix& m, std::span<const double> x, std::span<double> y);
// y = A^T x
void matvec_t(const Matrix& m, std::span<const double> x, std::span<double> y);
// A += alpha * u v^T
void add_outer(Matrix& m, double alpha, std::span<const double> u, std::span<const double> v);
// sum_ij A_ij B_ij
double frobenius_dot(const Matrix& a, const Matrix& b);
double dot(std::span<const double> a, std::span<const double> b);

// Left/right singular-vector estimates persisted across repeated power
// iterations on a slowly changing matrix.
struct PowerIterState {
  Vector u, v;
  bool initialized = false;
};

// Largest singular value via two-sided power iteration. Returns exactly 0
// for the zero matrix. Warm variant reuses and updates `state`.
double spectral_norm(const Matrix& m, int max_iters = 100, double tol = 1e-9);
double spectral_norm(const Matrix& m, int max_iters, double tol, PowerIterState& state);

// Deterministic splittable generator (xoshiro256** seeded via splitmix64).
// Identical seeds produce identical sequences on every platform.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed);

  // Independent stream derived from the original seed and a stream id;
  // unaffected by draws made from this generator.
  SeededRng split(uint64_t stream) const;

  uint64_t next_u64();
  double uniform();                    // [0, 1)
  double uniform(double a, double b);  // [a, b)
  double normal();                     // standard normal, Box-Muller
  uint64_t uniform_index(uint64_t n);  // [0, n), unbiased

  uint64_t seed() const { return seed_; }
  const uint64_t* state() const { return s_; }
  void set_state(const uint64_t st[4]);

 private:
  uint64_t seed_;
  uint64_t s_[4];
};

// Haar-random orthogonal matrix (Gaussian draw + modified Gram-Schmidt with
// re-orthogonalization, R-diagonal sign correction).
Matrix random_orthogonal(int n, SeededRng& rng);

bool all_finite(std::span<const double> x);
inline bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.a)); }

}  // namespace varnn
