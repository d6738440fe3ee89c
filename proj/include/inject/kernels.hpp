#pragma once

// Dense row-major kernels behind the tensor ops.
//
// Every kernel exists twice: `serial::` is the reference implementation and
// `parallel::` splits independent output rows across OpenMP threads. Each
// output element is accumulated in the same order in both, so the two are
// bit-identical; tests assert exact equality. The unqualified entry points
// dispatch to the parallel version when the build has OpenMP and the problem
// is large enough to amortize a parallel region.

#include <cstddef>
#include <cstdint>

namespace inject::kernels {

namespace serial {

/// c[M,N] += a[M,K] * b[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// c[M,N] += a[M,K] * b[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
/// c[M,N] += a[K,M]^T * b[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

/// Row-wise softmax. `keep` (nullable) has the same layout as x; rows whose
/// positions are all dropped produce zeros.
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, const std::uint8_t* keep, double* y);

/// Row-wise normalization; writes y, and per-row mean and reciprocal stddev.
void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x, const double* gain,
                     const double* bias, double eps, double* y, double* mean, double* rstd);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, const std::uint8_t* keep, double* y);
void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x, const double* gain,
                     const double* bias, double eps, double* y, double* mean, double* rstd);

}  // namespace parallel

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, const std::uint8_t* keep, double* y);
void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x, const double* gain,
                     const double* bias, double eps, double* y, double* mean, double* rstd);

/// True when compiled with OpenMP support.
bool openmp_enabled();

}  // namespace inject::kernels
