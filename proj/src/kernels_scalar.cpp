#include "bcrl/kernels.hpp"

namespace bcrl::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void add_scaled_outer_scalar(double* a, const double* x, double alpha,
                             std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    axpy_scalar(alpha * x[j], x, a + j * d, d);
  }
}

void add_ger_scalar(double* a, const double* x, const double* y, double alpha,
                    std::size_t rows, std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    axpy_scalar(alpha * y[j], x, a + j * rows, rows);
  }
}

void matvec_scalar(const double* a, std::size_t rows, std::size_t cols,
                   const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) y[i] = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    axpy_scalar(x[j], a + j * rows, y, rows);
  }
}

void matvec_t_scalar(const double* a, std::size_t rows, std::size_t cols,
                     const double* x, double* y) {
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = dot_scalar(a + j * rows, x, rows);
  }
}

}  // namespace

const Ops scalar_ops = {
    dot_scalar,     axpy_scalar,             scale_scalar,  sum_scalar,
    add_scaled_outer_scalar, add_ger_scalar, matvec_scalar, matvec_t_scalar,
};

}  // namespace bcrl::kernels
