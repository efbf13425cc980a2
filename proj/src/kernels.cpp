#include "pfv/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace pfv::kern {

// Loop order is i-k-j: each output row is a running accumulator updated once
// per k in ascending order, which is the same per-element addition order as
// the naive triple loop in ref_kernels.cpp. Keep it that way; the bitwise
// serial-vs-parallel tests depend on it.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = arow[kk];
      const T* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t kk = 0; kk < k; ++kk) {
    T* crow = c + kk * n;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int64_t i = 0; i < m; ++i) {
      T av = a[i * k + kk];
      const T* brow = b + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose2d(const T* in, T* out, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < cols; ++j) {
    T* orow = out + j * rows;
    for (int64_t i = 0; i < rows; ++i) orow[i] = in[i * cols + j];
  }
}

template <typename T>
void bmm_nn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t gg = 0; gg < g; ++gg) {
    for (int64_t i = 0; i < m; ++i) {
      const T* ag = a + gg * m * k;
      const T* bg = b + gg * k * n;
      T* crow = c + (gg * m + i) * n;
      if (!accumulate) {
        for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
      }
      const T* arow = ag + i * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        T av = arow[kk];
        const T* brow = bg + kk * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void bmm_nt(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t n, int64_t k,
            bool accumulate) {
  // c_g = a_g(m,n) @ b_g(k,n)^T. Transposing b_g into a scratch buffer keeps
  // the inner loop unit-stride; the per-(i,kk) addition order over j is still
  // ascending, matching the naive reference.
#pragma omp parallel for schedule(static)
  for (int64_t gg = 0; gg < g; ++gg) {
    std::vector<T> bt((size_t)(n * k));
    const T* bg = b + gg * k * n;
    for (int64_t kk = 0; kk < k; ++kk)
      for (int64_t j = 0; j < n; ++j) bt[(size_t)(j * k + kk)] = bg[kk * n + j];
    const T* ag = a + gg * m * n;
    T* cg = c + gg * m * k;
    for (int64_t i = 0; i < m; ++i) {
      T* crow = cg + i * k;
      if (!accumulate) {
        for (int64_t kk = 0; kk < k; ++kk) crow[kk] = T(0);
      }
      const T* arow = ag + i * n;
      for (int64_t j = 0; j < n; ++j) {
        T av = arow[j];
        const T* btrow = bt.data() + j * k;
        for (int64_t kk = 0; kk < k; ++kk) crow[kk] += av * btrow[kk];
      }
    }
  }
}

template <typename T>
void bmm_tn(const T* a, const T* b, T* c, int64_t g, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t gg = 0; gg < g; ++gg) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const T* ag = a + gg * m * k;
      const T* bg = b + gg * m * n;
      T* crow = c + (gg * k + kk) * n;
      if (!accumulate) {
        for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
      }
      for (int64_t i = 0; i < m; ++i) {
        T av = ag[i * k + kk];
        const T* brow = bg + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
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
#pragma omp parallel for schedule(static)
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
#pragma omp parallel for schedule(static)
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
    T var = v / (T)cols;
    T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs;
  }
}

template <typename T>
void layernorm_rows_backward(const T* x, const T* mean, const T* rstd, const T* dy, T* dx,
                             int64_t rows, int64_t cols, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    const T* dyr = dy + r * cols;
    T* dxr = dx + r * cols;
    T mu = mean[r];
    T rs = rstd[r];
    T s1 = T(0), s2 = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      T xh = (xr[j] - mu) * rs;
      s1 += dyr[j];
      s2 += dyr[j] * xh;
    }
    T inv = T(1) / (T)cols;
    for (int64_t j = 0; j < cols; ++j) {
      T xh = (xr[j] - mu) * rs;
      T v = rs * (dyr[j] - s1 * inv - xh * s2 * inv);
      dxr[j] = accumulate ? dxr[j] + v : v;
    }
  }
}

template <typename T>
T reduce_sum(const T* x, int64_t n) {
  if (n <= kReduceBlock) {
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  int64_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<T> partial((size_t)nblocks);
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < nblocks; ++b) {
    int64_t lo = b * kReduceBlock;
    int64_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
    T s = T(0);
    for (int64_t i = lo; i < hi; ++i) s += x[i];
    partial[(size_t)b] = s;
  }
  T s = T(0);
  for (int64_t b = 0; b < nblocks; ++b) s += partial[(size_t)b];
  return s;
}

#define PFV_KERN_INSTANTIATE(T)                                                                  \
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

PFV_KERN_INSTANTIATE(float)
PFV_KERN_INSTANTIATE(double)

#undef PFV_KERN_INSTANTIATE

}  // namespace pfv::kern
