#include "pfv/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "pfv/kernels.hpp"

namespace pfv {

namespace {

template <typename T>
void ensure_finite(const std::vector<T>& v, const char* op) {
  for (const T& x : v) {
    if (!std::isfinite((double)x))
      throw std::runtime_error(std::string(op) + ": produced a non-finite value");
  }
}

template <typename T>
bool any_requires_grad(const std::vector<std::shared_ptr<TensorNode<T>>>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

// Builds the output node: finite-checks the forward result, and records the
// graph edge only when grad mode is on and some input needs gradients.
template <typename T>
Tensor<T> make_out(Shape shape, std::vector<T> data, const char* op,
                   std::vector<std::shared_ptr<TensorNode<T>>> parents,
                   std::function<void(TensorNode<T>&)> backward) {
  ensure_finite(data, op);
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  if (grad_enabled() && any_requires_grad(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>::wrap(n);
}

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = (int)s.size() - 1; i >= 0; --i) {
    st[(size_t)i] = acc;
    acc *= s[(size_t)i];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::runtime_error(std::string(op) + ": shapes not broadcastable " + shape_str(a) +
                               " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Input strides right-aligned against `out`, 0 where the input broadcasts.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> ist = strides_of(in);
  std::vector<int64_t> st(out.size(), 0);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    st[off + i] = in[i] == 1 ? 0 : ist[i];
  return st;
}

int64_t checked_numel(const Shape& s, const char* op) {
  int64_t n = shape_numel(s);
  if (n <= 0) throw std::runtime_error(std::string(op) + ": empty shape " + shape_str(s));
  return n;
}

enum class Bin { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_same(const Tensor<T>& a, const Tensor<T>& b, Bin kind, const char* op) {
  int64_t n = a.numel();
  std::vector<T> out((size_t)n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  switch (kind) {
    case Bin::Add:
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < n; ++i) out[(size_t)i] = pa[i] + pb[i];
      break;
    case Bin::Sub:
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < n; ++i) out[(size_t)i] = pa[i] - pb[i];
      break;
    case Bin::Mul:
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < n; ++i) out[(size_t)i] = pa[i] * pb[i];
      break;
    case Bin::Div:
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < n; ++i) out[(size_t)i] = pa[i] / pb[i];
      break;
  }
  return make_out<T>(
      a.shape(), std::move(out), op, {a.node(), b.node()}, [kind, n](TensorNode<T>& o) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        const T* dy = o.grad.data();
        switch (kind) {
          case Bin::Add:
            if (pa.requires_grad) {
              T* da = pa.grad.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
            }
            if (pb.requires_grad) {
              T* db = pb.grad.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) db[i] += dy[i];
            }
            break;
          case Bin::Sub:
            if (pa.requires_grad) {
              T* da = pa.grad.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
            }
            if (pb.requires_grad) {
              T* db = pb.grad.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) db[i] -= dy[i];
            }
            break;
          case Bin::Mul:
            if (pa.requires_grad) {
              T* da = pa.grad.data();
              const T* vb = pb.data.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * vb[i];
            }
            if (pb.requires_grad) {
              T* db = pb.grad.data();
              const T* va = pa.data.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * va[i];
            }
            break;
          case Bin::Div:
            if (pa.requires_grad) {
              T* da = pa.grad.data();
              const T* vb = pb.data.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) da[i] += dy[i] / vb[i];
            }
            if (pb.requires_grad) {
              T* db = pb.grad.data();
              const T* va = pa.data.data();
              const T* vb = pb.data.data();
#pragma omp parallel for schedule(static)
              for (int64_t i = 0; i < n; ++i) db[i] -= dy[i] * va[i] / (vb[i] * vb[i]);
            }
            break;
        }
      });
}

template <typename T>
Tensor<T> binary_dispatch(const Tensor<T>& a, const Tensor<T>& b, Bin kind, const char* op) {
  if (same_shape(a.shape(), b.shape())) return binary_same(a, b, kind, op);
  Shape bs = broadcast_shape(a.shape(), b.shape(), op);
  Tensor<T> a2 = same_shape(a.shape(), bs) ? a : broadcast_to(a, bs);
  Tensor<T> b2 = same_shape(b.shape(), bs) ? b : broadcast_to(b, bs);
  return binary_same(a2, b2, kind, op);
}

// Unary element-wise helper. `fwd(x)` computes the value; `bwd(x, y, dy)`
// returns the gradient contribution to x.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, const char* op, Fwd fwd, Bwd bwd) {
  int64_t n = a.numel();
  std::vector<T> out((size_t)n);
  const T* pa = a.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[(size_t)i] = fwd(pa[i]);
  return make_out<T>(a.shape(), std::move(out), op, {a.node()}, [n, bwd](TensorNode<T>& o) {
    auto& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    const T* x = pa.data.data();
    const T* y = o.data.data();
    const T* dy = o.grad.data();
    T* dx = pa.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] += bwd(x[i], y[i], dy[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_dispatch(a, b, Bin::Add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_dispatch(a, b, Bin::Sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_dispatch(a, b, Bin::Mul, "mul");
}
template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_dispatch(a, b, Bin::Div, "divide");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary_op(
      a, "add_scalar", [s](T x) { return x + s; },
      [](T, T, T dy) { return dy; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary_op(
      a, "mul_scalar", [s](T x) { return x * s; },
      [s](T, T, T dy) { return dy * s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_op(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T dy) { return x > T(0) ? dy : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T inv_sqrt2 = T(0.7071067811865475244);
  const T inv_sqrt2pi = T(0.3989422804014326779);
  return unary_op(
      a, "gelu",
      [=](T x) { return T(0.5) * x * (T(1) + (T)std::erf((double)(x * inv_sqrt2))); },
      [=](T x, T, T dy) {
        T cdf = T(0.5) * (T(1) + (T)std::erf((double)(x * inv_sqrt2)));
        T pdf = inv_sqrt2pi * (T)std::exp((double)(T(-0.5) * x * x));
        return dy * (cdf + x * pdf);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + (T)std::exp((double)-x));
        T e = (T)std::exp((double)x);
        return e / (T(1) + e);
      },
      [](T, T y, T dy) { return dy * y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp_elem(const Tensor<T>& a) {
  return unary_op(
      a, "exp_elem", [](T x) { return (T)std::exp((double)x); },
      [](T, T y, T dy) { return dy * y; });
}

template <typename T>
Tensor<T> log_elem(const Tensor<T>& a) {
  return unary_op(
      a, "log_elem", [](T x) { return (T)std::log((double)x); },
      [](T x, T, T dy) { return dy / x; });
}

template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
  return unary_op(
      a, "sqrt_elem", [](T x) { return (T)std::sqrt((double)x); },
      [](T, T y, T dy) { return y > T(0) ? dy * T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> abs_elem(const Tensor<T>& a) {
  return unary_op(
      a, "abs_elem", [](T x) { return x < T(0) ? -x : x; },
      [](T x, T, T dy) { return x > T(0) ? dy : (x < T(0) ? -dy : T(0)); });
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& a) {
  return unary_op(
      a, "clamp01", [](T x) { return x < T(0) ? T(0) : (x > T(1) ? T(1) : x); },
      [](T x, T, T dy) { return (x >= T(0) && x <= T(1)) ? dy : T(0); });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
  if (a.rank() < 1) throw std::runtime_error("softmax_lastdim: rank-0 input");
  int64_t cols = a.dim(a.rank() - 1);
  int64_t rows = a.numel() / cols;
  std::vector<T> out((size_t)a.numel());
  kern::softmax_rows(a.data().data(), out.data(), rows, cols);
  return make_out<T>(a.shape(), std::move(out), "softmax_lastdim", {a.node()},
                     [rows, cols](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       if (!pa.requires_grad) return;
                       kern::softmax_rows_backward(o.data.data(), o.grad.data(), pa.grad.data(),
                                                   rows, cols, true);
                     });
}

template <typename T>
Tensor<T> layer_norm_lastdim(const Tensor<T>& a, T eps) {
  if (a.rank() < 1) throw std::runtime_error("layer_norm_lastdim: rank-0 input");
  int64_t cols = a.dim(a.rank() - 1);
  int64_t rows = a.numel() / cols;
  std::vector<T> out((size_t)a.numel());
  std::vector<T> mean((size_t)rows), rstd((size_t)rows);
  kern::layernorm_rows(a.data().data(), out.data(), mean.data(), rstd.data(), rows, cols, eps);
  return make_out<T>(a.shape(), std::move(out), "layer_norm_lastdim", {a.node()},
                     [rows, cols, mean = std::move(mean), rstd = std::move(rstd)](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       if (!pa.requires_grad) return;
                       kern::layernorm_rows_backward(pa.data.data(), mean.data(), rstd.data(),
                                                     o.grad.data(), pa.grad.data(), rows, cols,
                                                     true);
                     });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& w) {
  if (a.rank() < 1 || w.rank() != 2)
    throw std::runtime_error("matmul: need (...,K) @ (K,N), got " + shape_str(a.shape()) +
                             " vs " + shape_str(w.shape()));
  int64_t k = a.dim(a.rank() - 1);
  if (k != w.dim(0))
    throw std::runtime_error("matmul: inner dims differ " + shape_str(a.shape()) + " vs " +
                             shape_str(w.shape()));
  int64_t n = w.dim(1);
  int64_t rows = a.numel() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back((int)n);
  std::vector<T> out((size_t)(rows * n));
  kern::mm_nn(a.data().data(), w.data().data(), out.data(), rows, k, n, false);
  return make_out<T>(std::move(out_shape), std::move(out), "matmul", {a.node(), w.node()},
                     [rows, k, n](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       auto& pw = *o.parents[1];
                       if (pa.requires_grad) {
                         std::vector<T> wt((size_t)(n * k));
                         kern::transpose2d(pw.data.data(), wt.data(), k, n);
                         kern::mm_nn(o.grad.data(), wt.data(), pa.grad.data(), rows, n, k, true);
                       }
                       if (pw.requires_grad)
                         kern::mm_tn(pa.data.data(), o.grad.data(), pw.grad.data(), rows, k, n,
                                     true);
                     });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw std::runtime_error("bmm: need (G,M,K) @ (G,K,N), got " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out((size_t)(g * m * n));
  kern::bmm_nn(a.data().data(), b.data().data(), out.data(), g, m, k, n, false);
  return make_out<T>({(int)g, (int)m, (int)n}, std::move(out), "bmm", {a.node(), b.node()},
                     [g, m, k, n](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       auto& pb = *o.parents[1];
                       if (pa.requires_grad)
                         kern::bmm_nt(o.grad.data(), pb.data.data(), pa.grad.data(), g, m, n, k,
                                      true);
                       if (pb.requires_grad)
                         kern::bmm_tn(pa.data.data(), o.grad.data(), pb.grad.data(), g, m, k, n,
                                      true);
                     });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& s) {
  if (shape_numel(s) != a.numel())
    throw std::runtime_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(s));
  std::vector<T> out = a.data();
  int64_t n = a.numel();
  return make_out<T>(s, std::move(out), "reshape", {a.node()}, [n](TensorNode<T>& o) {
    auto& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    const T* dy = o.grad.data();
    T* dx = pa.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
  int r = a.rank();
  if ((int)perm.size() != r) throw std::runtime_error("permute: rank mismatch");
  std::vector<bool> seen((size_t)r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[(size_t)p]) throw std::runtime_error("permute: invalid axes");
    seen[(size_t)p] = true;
  }
  Shape out_shape((size_t)r);
  for (int i = 0; i < r; ++i) out_shape[(size_t)i] = a.dim(perm[(size_t)i]);
  std::vector<int64_t> in_st = strides_of(a.shape());
  std::vector<int64_t> src_st((size_t)r);  // stride in input per output axis
  for (int i = 0; i < r; ++i) src_st[(size_t)i] = in_st[(size_t)perm[(size_t)i]];
  std::vector<int64_t> out_st = strides_of(out_shape);
  int64_t n = a.numel();
  std::vector<T> out((size_t)n);
  const T* src = a.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i, off = 0;
    for (int d = 0; d < r; ++d) {
      int64_t c = rem / out_st[(size_t)d];
      rem -= c * out_st[(size_t)d];
      off += c * src_st[(size_t)d];
    }
    out[(size_t)i] = src[off];
  }
  return make_out<T>(std::move(out_shape), std::move(out), "permute", {a.node()},
                     [n, r, out_st, src_st](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       if (!pa.requires_grad) return;
                       const T* dy = o.grad.data();
                       T* dx = pa.grad.data();
                       // bijection: each output index maps to a distinct input
#pragma omp parallel for schedule(static)
                       for (int64_t i = 0; i < n; ++i) {
                         int64_t rem = i, off = 0;
                         for (int d = 0; d < r; ++d) {
                           int64_t c = rem / out_st[(size_t)d];
                           rem -= c * out_st[(size_t)d];
                           off += c * src_st[(size_t)d];
                         }
                         dx[off] += dy[i];
                       }
                     });
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
  if (a.rank() != b.rank() || axis < 0 || axis >= a.rank())
    throw std::runtime_error("concat: bad ranks/axis for " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw std::runtime_error("concat: shapes differ off-axis " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  int64_t na = a.dim(axis), nb = b.dim(axis);
  Shape out_shape = a.shape();
  out_shape[(size_t)axis] = (int)(na + nb);
  std::vector<T> out((size_t)(outer * (na + nb) * inner));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    T* dst = out.data() + o * (na + nb) * inner;
    const T* sa = pa + o * na * inner;
    const T* sb = pb + o * nb * inner;
    for (int64_t i = 0; i < na * inner; ++i) dst[i] = sa[i];
    for (int64_t i = 0; i < nb * inner; ++i) dst[na * inner + i] = sb[i];
  }
  return make_out<T>(std::move(out_shape), std::move(out), "concat", {a.node(), b.node()},
                     [outer, inner, na, nb](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       auto& pb = *o.parents[1];
                       const T* dy = o.grad.data();
                       if (pa.requires_grad) {
                         T* da = pa.grad.data();
#pragma omp parallel for schedule(static)
                         for (int64_t ou = 0; ou < outer; ++ou) {
                           const T* src = dy + ou * (na + nb) * inner;
                           T* dst = da + ou * na * inner;
                           for (int64_t i = 0; i < na * inner; ++i) dst[i] += src[i];
                         }
                       }
                       if (pb.requires_grad) {
                         T* db = pb.grad.data();
#pragma omp parallel for schedule(static)
                         for (int64_t ou = 0; ou < outer; ++ou) {
                           const T* src = dy + ou * (na + nb) * inner + na * inner;
                           T* dst = db + ou * nb * inner;
                           for (int64_t i = 0; i < nb * inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
  if (axis < 0 || axis >= a.rank() || start < 0 || len <= 0 || start + len > a.dim(axis))
    throw std::runtime_error("slice: window [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") invalid for axis " +
                             std::to_string(axis) + " of " + shape_str(a.shape()));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  int64_t nfull = a.dim(axis);
  Shape out_shape = a.shape();
  out_shape[(size_t)axis] = len;
  std::vector<T> out((size_t)(outer * len * inner));
  const T* pa = a.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = pa + (o * nfull + start) * inner;
    T* dst = out.data() + o * len * inner;
    for (int64_t i = 0; i < len * inner; ++i) dst[i] = src[i];
  }
  return make_out<T>(std::move(out_shape), std::move(out), "slice", {a.node()},
                     [outer, inner, nfull, start, len](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       if (!pa.requires_grad) return;
                       const T* dy = o.grad.data();
                       T* dx = pa.grad.data();
#pragma omp parallel for schedule(static)
                       for (int64_t ou = 0; ou < outer; ++ou) {
                         const T* src = dy + ou * len * inner;
                         T* dst = dx + (ou * nfull + start) * inner;
                         for (int64_t i = 0; i < (int64_t)len * inner; ++i) dst[i] += src[i];
                       }
                     });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& s) {
  checked_numel(s, "broadcast_to");
  if (s.size() > 8) throw std::runtime_error("broadcast_to: rank > 8 unsupported");
  if (a.rank() > (int)s.size())
    throw std::runtime_error("broadcast_to: cannot broadcast " + shape_str(a.shape()) + " to " +
                             shape_str(s));
  for (size_t i = 0; i < a.shape().size(); ++i) {
    int da = a.shape()[i];
    int dt = s[s.size() - a.shape().size() + i];
    if (da != dt && da != 1)
      throw std::runtime_error("broadcast_to: cannot broadcast " + shape_str(a.shape()) + " to " +
                               shape_str(s));
  }
  int r = (int)s.size();
  std::vector<int64_t> src_st = broadcast_strides(a.shape(), s);
  std::vector<int64_t> out_st = strides_of(s);
  int64_t n = shape_numel(s);
  std::vector<T> out((size_t)n);
  const T* src = a.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i, off = 0;
    for (int d = 0; d < r; ++d) {
      int64_t c = rem / out_st[(size_t)d];
      rem -= c * out_st[(size_t)d];
      off += c * src_st[(size_t)d];
    }
    out[(size_t)i] = src[off];
  }
  Shape out_shape = s;
  Shape in_shape = a.shape();
  return make_out<T>(
      std::move(out_shape), std::move(out), "broadcast_to", {a.node()},
      [s, in_shape, src_st, out_st, r](TensorNode<T>& o) {
        auto& pa = *o.parents[0];
        if (!pa.requires_grad) return;
        // Parallel over input elements; each one serially folds its own
        // preimage (the lattice spanned by the stride-0 axes).
        std::vector<int> bdims;
        for (int d = 0; d < r; ++d)
          if (src_st[(size_t)d] == 0 && s[(size_t)d] > 1) bdims.push_back(d);
        std::vector<int64_t> in_st = strides_of(in_shape);
        int64_t nin = (int64_t)pa.data.size();
        const T* dy = o.grad.data();
        T* dx = pa.grad.data();
        int in_r = (int)in_shape.size();
        int off_r = r - in_r;
        size_t nb = bdims.size();
#pragma omp parallel for schedule(static)
        for (int64_t j = 0; j < nin; ++j) {
          // input coords -> base output offset (input axes are the trailing
          // output axes; broadcast input dims contribute 0)
          int64_t rem = j, base = 0;
          for (int d = 0; d < in_r; ++d) {
            int64_t c = rem / in_st[(size_t)d];
            rem -= c * in_st[(size_t)d];
            if (in_shape[(size_t)d] != 1) base += c * out_st[(size_t)(off_r + d)];
          }
          T acc = T(0);
          // odometer over broadcast axes (rank capped at 8 by construction)
          int64_t coord[8] = {0, 0, 0, 0, 0, 0, 0, 0};
          for (;;) {
            int64_t off = base;
            for (size_t q = 0; q < nb; ++q) off += coord[q] * out_st[(size_t)bdims[q]];
            acc += dy[off];
            size_t q = nb;
            bool wrapped = true;
            while (q > 0) {
              --q;
              if (++coord[q] < s[(size_t)bdims[q]]) {
                wrapped = false;
                break;
              }
              coord[q] = 0;
            }
            if (wrapped) break;
          }
          dx[j] += acc;
        }
      });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = kern::reduce_sum(a.data().data(), a.numel());
  int64_t n = a.numel();
  return make_out<T>({1}, {s}, "sum_all", {a.node()}, [n](TensorNode<T>& o) {
    auto& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    T dy = o.grad[0];
    T* dx = pa.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] += dy;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  int64_t n = a.numel();
  T s = kern::reduce_sum(a.data().data(), n) / (T)n;
  return make_out<T>({1}, {s}, "mean_all", {a.node()}, [n](TensorNode<T>& o) {
    auto& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    T dy = o.grad[0] / (T)n;
    T* dx = pa.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] += dy;
  });
}

template <typename T>
Tensor<T> sum_tail(const Tensor<T>& a, int keep_dims) {
  if (keep_dims < 0 || keep_dims >= a.rank())
    throw std::runtime_error("sum_tail: keep_dims " + std::to_string(keep_dims) +
                             " out of range for " + shape_str(a.shape()));
  int64_t rows = 1;
  for (int i = 0; i < keep_dims; ++i) rows *= a.dim(i);
  int64_t tail = a.numel() / rows;
  Shape out_shape(a.shape().begin(), a.shape().begin() + keep_dims);
  std::vector<T> out((size_t)rows);
  const T* pa = a.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t rr = 0; rr < rows; ++rr) {
    const T* src = pa + rr * tail;
    T s = T(0);
    for (int64_t i = 0; i < tail; ++i) s += src[i];
    out[(size_t)rr] = s;
  }
  return make_out<T>(std::move(out_shape), std::move(out), "sum_tail", {a.node()},
                     [rows, tail](TensorNode<T>& o) {
                       auto& pa = *o.parents[0];
                       if (!pa.requires_grad) return;
                       const T* dy = o.grad.data();
                       T* dx = pa.grad.data();
#pragma omp parallel for schedule(static)
                       for (int64_t rr = 0; rr < rows; ++rr) {
                         T g = dy[rr];
                         T* dst = dx + rr * tail;
                         for (int64_t i = 0; i < tail; ++i) dst[i] += g;
                       }
                     });
}

template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  if (x.rank() != 3)
    throw std::runtime_error("mean_tokens: need (B,N,C), got " + shape_str(x.shape()));
  int64_t b = x.dim(0), nt = x.dim(1), c = x.dim(2);
  std::vector<T> out((size_t)(b * c));
  const T* px = x.data().data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t bb = 0; bb < b; ++bb) {
    for (int64_t cc = 0; cc < c; ++cc) {
      T s = T(0);
      const T* base = px + bb * nt * c + cc;
      for (int64_t t = 0; t < nt; ++t) s += base[t * c];
      out[(size_t)(bb * c + cc)] = s / (T)nt;
    }
  }
  return make_out<T>({(int)b, (int)c}, std::move(out), "mean_tokens", {x.node()},
                     [b, nt, c](TensorNode<T>& o) {
                       auto& px = *o.parents[0];
                       if (!px.requires_grad) return;
                       const T* dy = o.grad.data();
                       T* dx = px.grad.data();
#pragma omp parallel for schedule(static)
                       for (int64_t i = 0; i < b * nt * c; ++i) {
                         int64_t bb = i / (nt * c);
                         int64_t cc = i % c;
                         dx[i] += dy[bb * c + cc] / (T)nt;
                       }
                     });
}

namespace {
void check_index_mat(const IndexMat& idx, int rows, int max_col, const char* op) {
  if (idx.rows != rows || (int64_t)idx.idx.size() != (int64_t)idx.rows * idx.cols)
    throw std::runtime_error(std::string(op) + ": index matrix shape mismatch");
  for (int v : idx.idx)
    if (v < 0 || v >= max_col)
      throw std::runtime_error(std::string(op) + ": index " + std::to_string(v) +
                               " out of range [0," + std::to_string(max_col) + ")");
}
}  // namespace

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const IndexMat& idx) {
  if (x.rank() != 3)
    throw std::runtime_error("gather_rows: need (B,N,C), got " + shape_str(x.shape()));
  int64_t b = x.dim(0), nt = x.dim(1), c = x.dim(2);
  check_index_mat(idx, (int)b, (int)nt, "gather_rows");
  int64_t nv = idx.cols;
  std::vector<T> out((size_t)(b * nv * c));
  const T* px = x.data().data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t bb = 0; bb < b; ++bb) {
    for (int64_t v = 0; v < nv; ++v) {
      const T* src = px + (bb * nt + idx.at((int)bb, (int)v)) * c;
      T* dst = out.data() + (bb * nv + v) * c;
      for (int64_t i = 0; i < c; ++i) dst[i] = src[i];
    }
  }
  IndexMat idx_copy = idx;
  return make_out<T>({(int)b, (int)nv, (int)c}, std::move(out), "gather_rows", {x.node()},
                     [b, nt, c, nv, idx = std::move(idx_copy)](TensorNode<T>& o) {
                       auto& px = *o.parents[0];
                       if (!px.requires_grad) return;
                       const T* dy = o.grad.data();
                       T* dx = px.grad.data();
                       // rows may repeat within a sample: keep per-sample
                       // scatter-adds serial, parallelize over samples
#pragma omp parallel for schedule(static)
                       for (int64_t bb = 0; bb < b; ++bb) {
                         for (int64_t v = 0; v < nv; ++v) {
                           T* dst = dx + (bb * nt + idx.at((int)bb, (int)v)) * c;
                           const T* src = dy + (bb * nv + v) * c;
                           for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& base, const IndexMat& idx, const Tensor<T>& rows) {
  if (base.rank() != 3 || rows.rank() != 3)
    throw std::runtime_error("scatter_rows: need (B,N,C) and (B,Nv,C), got " +
                             shape_str(base.shape()) + " vs " + shape_str(rows.shape()));
  int64_t b = base.dim(0), nt = base.dim(1), c = base.dim(2);
  int64_t nv = rows.dim(1);
  if (rows.dim(0) != b || rows.dim(2) != c)
    throw std::runtime_error("scatter_rows: row block " + shape_str(rows.shape()) +
                             " does not match base " + shape_str(base.shape()));
  check_index_mat(idx, (int)b, (int)nt, "scatter_rows");
  std::vector<T> out = base.data();
  const T* pr = rows.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t bb = 0; bb < b; ++bb) {
    for (int64_t v = 0; v < nv; ++v) {  // ascending: duplicate indices -> last wins
      T* dst = out.data() + (bb * nt + idx.at((int)bb, (int)v)) * c;
      const T* src = pr + (bb * nv + v) * c;
      for (int64_t i = 0; i < c; ++i) dst[i] = src[i];
    }
  }
  IndexMat idx_copy = idx;
  return make_out<T>(
      base.shape(), std::move(out), "scatter_rows", {base.node(), rows.node()},
      [b, nt, c, nv, idx = std::move(idx_copy)](TensorNode<T>& o) {
        auto& pbase = *o.parents[0];
        auto& prows = *o.parents[1];
        const T* dy = o.grad.data();
        // A scattered position takes its value from the LAST write at that
        // index; earlier duplicates and the base row there get zero gradient.
        if (prows.requires_grad) {
          T* dr = prows.grad.data();
#pragma omp parallel for schedule(static)
          for (int64_t bb = 0; bb < b; ++bb) {
            std::vector<char> claimed((size_t)nt, 0);
            for (int64_t v = nv - 1; v >= 0; --v) {
              int row = idx.at((int)bb, (int)v);
              if (claimed[(size_t)row]) continue;
              claimed[(size_t)row] = 1;
              const T* src = dy + (bb * nt + row) * c;
              T* dst = dr + (bb * nv + v) * c;
              for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
            }
          }
        }
        if (pbase.requires_grad) {
          T* db = pbase.grad.data();
#pragma omp parallel for schedule(static)
          for (int64_t bb = 0; bb < b; ++bb) {
            std::vector<char> written((size_t)nt, 0);
            for (int64_t v = 0; v < nv; ++v) written[(size_t)idx.at((int)bb, (int)v)] = 1;
            for (int64_t t = 0; t < nt; ++t) {
              if (written[(size_t)t]) continue;
              const T* src = dy + (bb * nt + t) * c;
              T* dst = db + (bb * nt + t) * c;
              for (int64_t i = 0; i < c; ++i) dst[i] += src[i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gather_batch(const Tensor<T>& x, const std::vector<int>& sel) {
  if (x.rank() < 1) throw std::runtime_error("gather_batch: rank-0 input");
  if (sel.empty()) throw std::runtime_error("gather_batch: empty selection");
  int64_t b = x.dim(0);
  int64_t rest = x.numel() / b;
  for (int s : sel)
    if (s < 0 || s >= b)
      throw std::runtime_error("gather_batch: index " + std::to_string(s) + " out of range [0," +
                               std::to_string(b) + ")");
  Shape out_shape = x.shape();
  out_shape[0] = (int)sel.size();
  int64_t ns = (int64_t)sel.size();
  std::vector<T> out((size_t)(ns * rest));
  const T* px = x.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t s = 0; s < ns; ++s) {
    const T* src = px + (int64_t)sel[(size_t)s] * rest;
    T* dst = out.data() + s * rest;
    for (int64_t i = 0; i < rest; ++i) dst[i] = src[i];
  }
  std::vector<int> sel_copy = sel;
  return make_out<T>(std::move(out_shape), std::move(out), "gather_batch", {x.node()},
                     [ns, rest, sel = std::move(sel_copy)](TensorNode<T>& o) {
                       auto& px = *o.parents[0];
                       if (!px.requires_grad) return;
                       const T* dy = o.grad.data();
                       T* dx = px.grad.data();
                       // selection may repeat samples: serial outer loop,
                       // parallel inner copy keeps accumulation safe
                       for (int64_t s = 0; s < ns; ++s) {
                         const T* src = dy + s * rest;
                         T* dst = dx + (int64_t)sel[(size_t)s] * rest;
#pragma omp parallel for schedule(static)
                         for (int64_t i = 0; i < rest; ++i) dst[i] += src[i];
                       }
                     });
}

namespace {

// Shared shape logic for the gated split pair. Returns true when the gate is
// per-channel (B,C) against z(B,N,C); false when shapes match exactly.
template <typename T>
bool gate_is_broadcast(const Tensor<T>& z, const Tensor<T>& g, const char* op) {
  if (same_shape(z.shape(), g.shape())) return false;
  if (z.rank() == 3 && g.rank() == 2 && z.dim(0) == g.dim(0) && z.dim(2) == g.dim(1)) return true;
  throw std::runtime_error(std::string(op) + ": gate " + shape_str(g.shape()) +
                           " incompatible with " + shape_str(z.shape()));
}

// primary=true computes the gate share, false the complement share, via the
// larger-factor-product / exact-subtraction construction.
template <typename T>
Tensor<T> gate_split(const Tensor<T>& z, const Tensor<T>& g, bool primary, const char* op) {
  bool bc = gate_is_broadcast(z, g, op);
  int64_t b = z.dim(0);
  int64_t nt = bc ? z.dim(1) : 1;
  int64_t c = bc ? z.dim(2) : 0;
  int64_t n = z.numel();
  std::vector<T> out((size_t)n);
  const T* pz = z.data().data();
  const T* pg = g.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    T gv = bc ? pg[(i / (nt * c)) * c + (i % c)] : pg[i];
    T zv = pz[i];
    T share;
    if (zv == T(0)) {
      share = zv;  // preserve signed zero: (-0) + (-0) == -0 bitwise
    } else if (gv >= T(0.5)) {
      T big = zv * gv;
      share = primary ? big : zv - big;
    } else {
      T big = zv * (T(1) - gv);
      share = primary ? zv - big : big;
    }
    out[(size_t)i] = share;
  }
  return make_out<T>(
      z.shape(), std::move(out), op, {z.node(), g.node()},
      [b, nt, c, n, bc, primary](TensorNode<T>& o) {
        auto& pz = *o.parents[0];
        auto& pg = *o.parents[1];
        const T* dy = o.grad.data();
        const T* zv = pz.data.data();
        const T* gv = pg.data.data();
        if (pz.requires_grad) {
          T* dz = pz.grad.data();
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < n; ++i) {
            T gg = bc ? gv[(i / (nt * c)) * c + (i % c)] : gv[i];
            T f = primary ? gg : T(1) - gg;
            dz[i] += dy[i] * f;
          }
        }
        if (pg.requires_grad) {
          T* dg = pg.grad.data();
          T sgn = primary ? T(1) : T(-1);
          if (!bc) {
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) dg[i] += sgn * dy[i] * zv[i];
          } else {
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t bb = 0; bb < b; ++bb) {
              for (int64_t cc = 0; cc < c; ++cc) {
                T s = T(0);
                for (int64_t t = 0; t < nt; ++t) {
                  int64_t i = (bb * nt + t) * c + cc;
                  s += dy[i] * zv[i];
                }
                dg[bb * c + cc] += sgn * s;
              }
            }
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> gate_mul(const Tensor<T>& z, const Tensor<T>& g) {
  return gate_split(z, g, true, "gate_mul");
}

template <typename T>
Tensor<T> gate_mul_complement(const Tensor<T>& z, const Tensor<T>& g) {
  return gate_split(z, g, false, "gate_mul_complement");
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (!same_shape(logits.shape(), targets.shape()))
    throw std::runtime_error("bce_with_logits: shape mismatch " + shape_str(logits.shape()) +
                             " vs " + shape_str(targets.shape()));
  if (targets.requires_grad())
    throw std::runtime_error("bce_with_logits: targets must be constant");
  int64_t n = logits.numel();
  std::vector<T> out((size_t)n);
  const T* pl = logits.data().data();
  const T* pt = targets.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    T l = pl[i], t = pt[i];
    T pos = l > T(0) ? l : T(0);
    out[(size_t)i] = pos - l * t + (T)std::log1p(std::exp(-(double)std::fabs((double)l)));
  }
  return make_out<T>(logits.shape(), std::move(out), "bce_with_logits",
                     {logits.node(), targets.node()}, [n](TensorNode<T>& o) {
                       auto& pl = *o.parents[0];
                       if (!pl.requires_grad) return;
                       const T* l = pl.data.data();
                       const T* t = o.parents[1]->data.data();
                       const T* dy = o.grad.data();
                       T* dl = pl.grad.data();
#pragma omp parallel for schedule(static)
                       for (int64_t i = 0; i < n; ++i) {
                         T x = l[i];
                         T s;
                         if (x >= T(0))
                           s = T(1) / (T(1) + (T)std::exp(-(double)x));
                         else {
                           T e = (T)std::exp((double)x);
                           s = e / (T(1) + e);
                         }
                         dl[i] += dy[i] * (s - t[i]);
                       }
                     });
}

template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw std::runtime_error("cross_entropy_rows: need (B,K), got " + shape_str(logits.shape()));
  int64_t b = logits.dim(0), k = logits.dim(1);
  if ((int64_t)labels.size() != b)
    throw std::runtime_error("cross_entropy_rows: " + std::to_string(labels.size()) +
                             " labels for batch " + std::to_string(b));
  for (int y : labels)
    if (y < 0 || y >= k)
      throw std::runtime_error("cross_entropy_rows: label " + std::to_string(y) +
                               " out of range [0," + std::to_string(k) + ")");
  std::vector<T> out((size_t)b);
  std::vector<T> lse((size_t)b);
  const T* pl = logits.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < b; ++r) {
    const T* row = pl + r * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j)
      if (row[j] > mx) mx = row[j];
    T s = T(0);
    for (int64_t j = 0; j < k; ++j) s += (T)std::exp((double)(row[j] - mx));
    T l = mx + (T)std::log((double)s);
    lse[(size_t)r] = l;
    out[(size_t)r] = l - row[labels[(size_t)r]];
  }
  std::vector<int> labels_copy = labels;
  return make_out<T>({(int)b}, std::move(out), "cross_entropy_rows", {logits.node()},
                     [b, k, lse = std::move(lse), labels = std::move(labels_copy)](TensorNode<T>& o) {
                       auto& pl = *o.parents[0];
                       if (!pl.requires_grad) return;
                       const T* l = pl.data.data();
                       const T* dy = o.grad.data();
                       T* dl = pl.grad.data();
#pragma omp parallel for schedule(static)
                       for (int64_t r = 0; r < b; ++r) {
                         const T* row = l + r * k;
                         T* drow = dl + r * k;
                         T g = dy[r];
                         for (int64_t j = 0; j < k; ++j) {
                           T p = (T)std::exp((double)(row[j] - lse[(size_t)r]));
                           T ind = j == labels[(size_t)r] ? T(1) : T(0);
                           drow[j] += g * (p - ind);
                         }
                       }
                     });
}

// Explicit instantiation for the two supported element types.
#define PFV_OPS_INSTANTIATE(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> divide(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> neg(const Tensor<T>&);                                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> exp_elem(const Tensor<T>&);                                                 \
  template Tensor<T> log_elem(const Tensor<T>&);                                                 \
  template Tensor<T> sqrt_elem(const Tensor<T>&);                                                \
  template Tensor<T> abs_elem(const Tensor<T>&);                                                 \
  template Tensor<T> clamp01(const Tensor<T>&);                                                  \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                          \
  template Tensor<T> layer_norm_lastdim(const Tensor<T>&, T);                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                    \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                         \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&, int);                            \
  template Tensor<T> slice(const Tensor<T>&, int, int, int);                                     \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                               \
  template Tensor<T> sum_all(const Tensor<T>&);                                                  \
  template Tensor<T> mean_all(const Tensor<T>&);                                                 \
  template Tensor<T> sum_tail(const Tensor<T>&, int);                                            \
  template Tensor<T> mean_tokens(const Tensor<T>&);                                              \
  template Tensor<T> gather_rows(const Tensor<T>&, const IndexMat&);                             \
  template Tensor<T> scatter_rows(const Tensor<T>&, const IndexMat&, const Tensor<T>&);          \
  template Tensor<T> gather_batch(const Tensor<T>&, const std::vector<int>&);                    \
  template Tensor<T> gate_mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> gate_mul_complement(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> cross_entropy_rows(const Tensor<T>&, const std::vector<int>&);

PFV_OPS_INSTANTIATE(float)
PFV_OPS_INSTANTIATE(double)

#undef PFV_OPS_INSTANTIATE

}  // namespace pfv
