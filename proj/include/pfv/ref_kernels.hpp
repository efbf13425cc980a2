#pragma once

#include <cstdint>

// Plain serial reference kernels: the simplest possible loop nests, written
// independently of the OpenMP versions in kernels.hpp. They serve two roles:
// oracles for the bitwise kernel tests, and the serial baseline for the
// bench_kernels comparison target. Not linked into the main library.
namespace pfv::ref {

template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);

template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);

template <typename T>
void transpose2d(const T* in, T* out, int64_t rows, int64_t cols);

template <typename T>
void bmm_nn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n, bool accumulate);

template <typename T>
void bmm_nt(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t n, int64_t k, bool accumulate);

template <typename T>
void bmm_tn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n, bool accumulate);

template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t cols);

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int64_t rows, int64_t cols, bool accumulate);

template <typename T>
void layernorm_rows(const T* x, T* y, T* mean, T* rstd, int64_t rows, int64_t cols, T eps);

template <typename T>
void layernorm_rows_backward(const T* x, const T* mean, const T* rstd, const T* dy, T* dx,
                             int64_t rows, int64_t cols, bool accumulate);

// Plain left-to-right fold. Bitwise-equal to kern::reduce_sum only for
// n <= kern::kReduceBlock (a single block is a plain fold); larger inputs are
// compared under tolerance in the tests.
template <typename T>
T reduce_sum(const T* x, int64_t n);

}  // namespace pfv::ref
