#include "inject/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace inject::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

inline void gemm_nn_row(std::size_t i, std::size_t n, std::size_t k, const double* a, const double* b,
                        double* c) {
  double* crow = c + i * n;
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(std::size_t i, std::size_t n, std::size_t k, const double* a, const double* b,
                        double* c) {
  double* crow = c + i * n;
  const double* arow = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] += acc;
  }
}

inline void gemm_tn_row(std::size_t i, std::size_t m, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c) {
  double* crow = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(std::size_t cols, const double* x, const std::uint8_t* keep, double* y) {
  double peak = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < cols; ++j) {
    if (keep && !keep[j]) continue;
    peak = std::max(peak, x[j]);
    any = true;
  }
  if (!any) {
    std::fill(y, y + cols, 0.0);
    return;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    if (keep && !keep[j]) {
      y[j] = 0.0;
      continue;
    }
    y[j] = std::exp(x[j] - peak);
    total += y[j];
  }
  for (std::size_t j = 0; j < cols; ++j) y[j] /= total;
}

inline void layer_norm_row(std::size_t cols, const double* x, const double* gain, const double* bias,
                           double eps, double* y, double* mean_out, double* rstd_out) {
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) sum += x[j];
  const double mean = sum / static_cast<double>(cols);
  double sq = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    sq += d * d;
  }
  const double rstd = 1.0 / std::sqrt(sq / static_cast<double>(cols) + eps);
  for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
  *mean_out = mean;
  *rstd_out = rstd;
}

}  // namespace

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, n, k, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) gemm_tn_row(i, m, n, k, a, b, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, const std::uint8_t* keep, double* y) {
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(cols, x + r * cols, keep ? keep + r * cols : nullptr, y + r * cols);
}

void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x, const double* gain,
                     const double* bias, double eps, double* y, double* mean, double* rstd) {
  for (std::size_t r = 0; r < rows; ++r)
    layer_norm_row(cols, x + r * cols, gain, bias, eps, y + r * cols, mean + r, rstd + r);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_nn_row(static_cast<std::size_t>(i), n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_nt_row(static_cast<std::size_t>(i), n, k, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_tn_row(static_cast<std::size_t>(i), m, n, k, a, b, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, const std::uint8_t* keep, double* y) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < count; ++r) {
    const auto row = static_cast<std::size_t>(r);
    softmax_row(cols, x + row * cols, keep ? keep + row * cols : nullptr, y + row * cols);
  }
}

void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x, const double* gain,
                     const double* bias, double eps, double* y, double* mean, double* rstd) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < count; ++r) {
    const auto row = static_cast<std::size_t>(r);
    layer_norm_row(cols, x + row * cols, gain, bias, eps, y + row * cols, mean + row, rstd + row);
  }
}

}  // namespace parallel

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

namespace {

bool use_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelWork && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  if (use_parallel(m * n * k)) return parallel::gemm_nn(m, n, k, a, b, c);
  serial::gemm_nn(m, n, k, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  if (use_parallel(m * n * k)) return parallel::gemm_nt(m, n, k, a, b, c);
  serial::gemm_nt(m, n, k, a, b, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  if (use_parallel(m * n * k)) return parallel::gemm_tn(m, n, k, a, b, c);
  serial::gemm_tn(m, n, k, a, b, c);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, const std::uint8_t* keep, double* y) {
  if (use_parallel(rows * cols * 8)) return parallel::softmax_rows(rows, cols, x, keep, y);
  serial::softmax_rows(rows, cols, x, keep, y);
}

void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x, const double* gain,
                     const double* bias, double eps, double* y, double* mean, double* rstd) {
  if (use_parallel(rows * cols * 8))
    return parallel::layer_norm_rows(rows, cols, x, gain, bias, eps, y, mean, rstd);
  serial::layer_norm_rows(rows, cols, x, gain, bias, eps, y, mean, rstd);
}

}  // namespace inject::kernels
