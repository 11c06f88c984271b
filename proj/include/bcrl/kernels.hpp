#pragma once

#include <cstddef>
#include <string_view>

namespace bcrl::kernels {

// Dense double-precision kernels used by the streaming inner loops
// (covariance/Gram accumulation over datasets, network mat-vecs, batched
// loss reductions). Every kernel has a scalar reference implementation and,
// on x86 hosts that support it, an AVX2+FMA variant. The active backend is
// chosen once at startup and can be forced for equivalence testing.
//
// All matrix arguments are column-major with no padding. Reduction order is
// fixed within a backend, so results are deterministic per backend; scalar
// and AVX2 results may differ by rounding only.

struct Ops {
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x *= a
  void (*scale)(double a, double* x, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
  // A += alpha * x * x^T, A is d x d column-major
  void (*add_scaled_outer)(double* a, const double* x, double alpha,
                           std::size_t d);
  // A += alpha * x * y^T, A is rows x cols column-major
  void (*add_ger)(double* a, const double* x, const double* y, double alpha,
                  std::size_t rows, std::size_t cols);
  // y = A * x, A is rows x cols column-major
  void (*matvec)(const double* a, std::size_t rows, std::size_t cols,
                 const double* x, double* y);
  // y = A^T * x, A is rows x cols column-major
  void (*matvec_t)(const double* a, std::size_t rows, std::size_t cols,
                   const double* x, double* y);
};

enum class Backend { scalar, avx2 };

// Active dispatch table. Defaults to the best backend the CPU supports.
const Ops& ops();

Backend active_backend();
// Throws std::invalid_argument if the requested backend is unavailable here.
void set_backend(Backend b);
bool backend_available(Backend b);
std::string_view backend_name(Backend b);

extern const Ops scalar_ops;
#if defined(BCRL_HAVE_AVX2_TU)
extern const Ops avx2_ops;
#endif

// Convenience forwarders through the active backend.
inline double dot(const double* x, const double* y, std::size_t n) {
  return ops().dot(x, y, n);
}
inline void axpy(double a, const double* x, double* y, std::size_t n) {
  ops().axpy(a, x, y, n);
}
inline void scale(double a, double* x, std::size_t n) { ops().scale(a, x, n); }
inline double sum(const double* x, std::size_t n) { return ops().sum(x, n); }
inline void add_scaled_outer(double* a, const double* x, double alpha,
                             std::size_t d) {
  ops().add_scaled_outer(a, x, alpha, d);
}
inline void add_ger(double* a, const double* x, const double* y, double alpha,
                    std::size_t rows, std::size_t cols) {
  ops().add_ger(a, x, y, alpha, rows, cols);
}
inline void matvec(const double* a, std::size_t rows, std::size_t cols,
                   const double* x, double* y) {
  ops().matvec(a, rows, cols, x, y);
}
inline void matvec_t(const double* a, std::size_t rows, std::size_t cols,
                     const double* x, double* y) {
  ops().matvec_t(a, rows, cols, x, y);
}

}  // namespace bcrl::kernels
