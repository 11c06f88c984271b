#include "bcrl/kernels.hpp"

#include <immintrin.h>

// AVX2+FMA variants. Four-lane doubles, scalar tail. Lane order inside a
// register is fixed, so each kernel is deterministic; only the association
// of the reduction differs from the scalar reference.

namespace bcrl::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i] * y[i];
  return r;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scale_avx2(double a, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  }
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

void add_scaled_outer_avx2(double* a, const double* x, double alpha,
                           std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    axpy_avx2(alpha * x[j], x, a + j * d, d);
  }
}

void add_ger_avx2(double* a, const double* x, const double* y, double alpha,
                  std::size_t rows, std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    axpy_avx2(alpha * y[j], x, a + j * rows, rows);
  }
}

void matvec_avx2(const double* a, std::size_t rows, std::size_t cols,
                 const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) y[i] = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    axpy_avx2(x[j], a + j * rows, y, rows);
  }
}

void matvec_t_avx2(const double* a, std::size_t rows, std::size_t cols,
                   const double* x, double* y) {
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = dot_avx2(a + j * rows, x, rows);
  }
}

}  // namespace

const Ops avx2_ops = {
    dot_avx2,     axpy_avx2,           scale_avx2,  sum_avx2,
    add_scaled_outer_avx2, add_ger_avx2, matvec_avx2, matvec_t_avx2,
};

}  // namespace bcrl::kernels
