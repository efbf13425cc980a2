#pragma once

#include <cstdint>

// Hot numeric kernels, parallelized with OpenMP. Every pragma splits work over
// disjoint output elements, and every cross-element reduction uses a fixed
// block decomposition combined serially, so results are bit-identical for any
// thread count. A plain serial reference implementation of each kernel lives
// in ref_kernels.hpp; the test suite asserts bitwise agreement and the
// bench_kernels tool compares throughput.
namespace pfv::kern {

// Fixed block size for deterministic sums. Sums over <= kReduceBlock elements
// are plain left-to-right folds.
inline constexpr int64_t kReduceBlock = 4096;

// C(m,n) = A(m,k) @ B(k,n); adds into C when accumulate is set.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);

// C(k,n) = A(m,k)^T @ B(m,n); adds into C when accumulate is set.
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);

// out(cols,rows) = in(rows,cols)^T
template <typename T>
void transpose2d(const T* in, T* out, int64_t rows, int64_t cols);

// Batched over leading dimension g.
template <typename T>
void bmm_nn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n, bool accumulate);

// C_g(m,k) = A_g(m,n) @ B_g(k,n)^T; adds into C when accumulate is set.
template <typename T>
void bmm_nt(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t n, int64_t k, bool accumulate);

// C_g(k,n) = A_g(m,k)^T @ B_g(m,n); adds into C when accumulate is set.
template <typename T>
void bmm_tn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n, bool accumulate);

// Row-wise softmax with max subtraction.
template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t cols);

// dx from saved softmax output y: dx = y * (dy - sum(dy * y)).
template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int64_t rows, int64_t cols, bool accumulate);

// Row-wise layer norm (no affine); saves per-row mean and reciprocal stddev.
template <typename T>
void layernorm_rows(const T* x, T* y, T* mean, T* rstd, int64_t rows, int64_t cols, T eps);

template <typename T>
void layernorm_rows_backward(const T* x, const T* mean, const T* rstd, const T* dy, T* dx,
                             int64_t rows, int64_t cols, bool accumulate);

// Deterministic sum: fixed kReduceBlock partial sums, combined serially.
template <typename T>
T reduce_sum(const T* x, int64_t n);

}  // namespace pfv::kern
