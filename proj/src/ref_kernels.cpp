#include "pfv/ref_kernels.hpp"

#include <cmath>

namespace pfv::ref {

// Accumulation order contract shared with the fast kernels: each output
// element is a left-to-right fold over its contraction index, seeded with the
// existing value when accumulate is set.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (int64_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t kk = 0; kk < k; ++kk) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[kk * n + j] : T(0);
      for (int64_t i = 0; i < m; ++i) acc += a[i * k + kk] * b[i * n + j];
      c[kk * n + j] = acc;
    }
  }
}

template <typename T>
void transpose2d(const T* in, T* out, int64_t rows, int64_t cols) {
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
}

template <typename T>
void bmm_nn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
  for (int64_t gg = 0; gg < g; ++gg)
    mm_nn(a + gg * m * k, b + gg * k * n, c + gg * m * n, m, k, n, accumulate);
}

template <typename T>
void bmm_nt(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t n, int64_t k,
            bool accumulate) {
  for (int64_t gg = 0; gg < g; ++gg) {
    const T* ag = a + gg * m * n;
    const T* bg = b + gg * k * n;
    T* cg = c + gg * m * k;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t kk = 0; kk < k; ++kk) {
        T acc = accumulate ? cg[i * k + kk] : T(0);
        for (int64_t j = 0; j < n; ++j) acc += ag[i * n + j] * bg[kk * n + j];
        cg[i * k + kk] = acc;
      }
    }
  }
}

template <typename T>
void bmm_tn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
  for (int64_t gg = 0; gg < g; ++gg)
    mm_tn(a + gg * m * k, b + gg * m * n, c + gg * k * n, m, k, n, accumulate);
}

template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mx = xr[0];
    for (int64_t j = 1; j < cols; ++j)
      if (xr[j] > mx) mx = xr[j];
    T sum = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    T inv = T(1) / sum;
    for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int64_t rows, int64_t cols,
                           bool accumulate) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* yr = y + r * cols;
    const T* dyr = dy + r * cols;
    T* dxr = dx + r * cols;
    T s = T(0);
    for (int64_t j = 0; j < cols; ++j) s += yr[j] * dyr[j];
    for (int64_t j = 0; j < cols; ++j) {
      T v = yr[j] * (dyr[j] - s);
      dxr[j] = accumulate ? dxr[j] + v : v;
    }
  }
}

template <typename T>
void layernorm_rows(const T* x, T* y, T* mean, T* rstd, int64_t rows, int64_t cols, T eps) {
  // Two-pass mean/variance, matching the formula choice in kernels.cpp.
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T s = T(0);
    for (int64_t j = 0; j < cols; ++j) s += xr[j];
    T mu = s / (T)cols;
    T v = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      T d = xr[j] - mu;
      v += d * d;
    }
    T rs = T(1) / std::sqrt(v / (T)cols + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs;
  }
}

template <typename T>
void layernorm_rows_backward(const T* x, const T* mean, const T* rstd, const T* dy, T* dx,
                             int64_t rows, int64_t cols, bool accumulate) {
  // Formula contract shared with kernels.cpp: the 1/cols factor is applied by
  // multiplying with a precomputed reciprocal.
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    const T* dyr = dy + r * cols;
    T* dxr = dx + r * cols;
    T s1 = T(0), s2 = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      T xh = (xr[j] - mean[r]) * rstd[r];
      s1 += dyr[j];
      s2 += dyr[j] * xh;
    }
    T inv = T(1) / (T)cols;
    for (int64_t j = 0; j < cols; ++j) {
      T xh = (xr[j] - mean[r]) * rstd[r];
      T v = rstd[r] * (dyr[j] - s1 * inv - xh * s2 * inv);
      dxr[j] = accumulate ? dxr[j] + v : v;
    }
  }
}

template <typename T>
T reduce_sum(const T* x, int64_t n) {
  T s = T(0);
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

#define PFV_REF_INSTANTIATE(T)                                                                   \
  template void mm_nn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, bool);               \
  template void mm_tn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, bool);               \
  template void transpose2d<T>(const T*, T*, int64_t, int64_t);                                  \
  template void bmm_nn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, int64_t, bool);     \
  template void bmm_nt<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, int64_t, bool);     \
  template void bmm_tn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, int64_t, bool);     \
  template void softmax_rows<T>(const T*, T*, int64_t, int64_t);                                 \
  template void softmax_rows_backward<T>(const T*, const T*, T*, int64_t, int64_t, bool);        \
  template void layernorm_rows<T>(const T*, T*, T*, T*, int64_t, int64_t, T);                    \
  template void layernorm_rows_backward<T>(const T*, const T*, const T*, const T*, T*, int64_t,  \
                                           int64_t, bool);                                       \
  template T reduce_sum<T>(const T*, int64_t);

PFV_REF_INSTANTIATE(float)
PFV_REF_INSTANTIATE(double)

#undef PFV_REF_INSTANTIATE

}  // namespace pfv::ref
