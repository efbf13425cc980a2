#pragma once

#include <vector>

#include "pfv/tensor.hpp"

// Differentiable tensor ops. Conventions:
//  - Shapes must match exactly unless the op documents broadcasting; binary
//    ops broadcast numpy-style (right-aligned, size-1 dims stretch).
//  - Every op validates shapes up front and raises std::runtime_error naming
//    the op and both shapes.
//  - Every op checks its forward output for non-finite values and raises
//    immediately, so failures point at the op that produced them.
//  - All loops parallelize over disjoint output elements and reductions use
//    fixed-order folds, so results do not depend on thread count.
namespace pfv {

// Row-index matrix for gather/scatter: `rows` samples, `cols` indices each.
struct IndexMat {
  int rows = 0;
  int cols = 0;
  std::vector<int> idx;  // rows*cols, row-major
  int at(int r, int c) const { return idx[(size_t)r * (size_t)cols + (size_t)c]; }
};

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);  // exact erf form
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> exp_elem(const Tensor<T>& a);
template <typename T> Tensor<T> log_elem(const Tensor<T>& a);
// d/dx sqrt at x == 0 is defined as 0 (subgradient choice for norms).
template <typename T> Tensor<T> sqrt_elem(const Tensor<T>& a);
template <typename T> Tensor<T> abs_elem(const Tensor<T>& a);
// Clamp to [0,1]; gradient passes through inside the range, 0 outside.
template <typename T> Tensor<T> clamp01(const Tensor<T>& a);

template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& a);
template <typename T> Tensor<T> layer_norm_lastdim(const Tensor<T>& a, T eps);

// a(..., K) @ w(K, N) -> (..., N). Leading dims of `a` are flattened to rows.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& w);
// a(G, M, K) @ b(G, K, N) -> (G, M, N)
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, const Shape& s);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm);
template <typename T> Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& s);

template <typename T> Tensor<T> sum_all(const Tensor<T>& a);   // -> shape {1}
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);  // -> shape {1}
// Keep the first `keep_dims` dims, summing the (contiguous) rest.
template <typename T> Tensor<T> sum_tail(const Tensor<T>& a, int keep_dims);
// x(B, N, C) -> (B, C), mean over the middle (token) axis.
template <typename T> Tensor<T> mean_tokens(const Tensor<T>& x);

// x(B, N, C) + idx(B, Nv) -> (B, Nv, C); out[b,v,:] = x[b, idx[b,v], :].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const IndexMat& idx);
// base(B, N, C) with rows(B, Nv, C) written at idx; duplicate indices: last wins.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& base, const IndexMat& idx, const Tensor<T>& rows);
// x(B, ...) -> (S, ...) selecting samples along dim 0 (indices may repeat).
template <typename T> Tensor<T> gather_batch(const Tensor<T>& x, const std::vector<int>& sel);

// Gated split of z into a pair that sums back to z bit-exactly.
// gate_mul returns the gate's share, gate_mul_complement the remainder; for
// each element the larger share is computed as a rounded product and the
// smaller as an exact (Sterbenz) subtraction, so
//   gate_mul(z,g) + gate_mul_complement(z,g) == z   bitwise, element-wise.
// Gradients use the analytic d(z*g) / d(z*(1-g)) forms. g is either shaped
// like z or (B, C) against z(B, N, C), broadcasting over tokens.
template <typename T> Tensor<T> gate_mul(const Tensor<T>& z, const Tensor<T>& g);
template <typename T> Tensor<T> gate_mul_complement(const Tensor<T>& z, const Tensor<T>& g);

// Element-wise binary cross-entropy from logits (stable log1p/exp form).
// `targets` is a constant (requires_grad must be false).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets);
// logits(B, K), labels 0-based -> per-sample cross-entropy (B,).
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& labels);

}  // namespace pfv
