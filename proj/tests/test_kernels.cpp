// Bitwise agreement between the OpenMP kernels and the serial reference, plus
// invariance of kernel output under different thread counts.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include <omp.h>

#include "pfv/kernels.hpp"
#include "pfv/ref_kernels.hpp"
#include "pfv/rng.hpp"

using pfv::Rng;

namespace {

template <typename T>
std::vector<T> rand_vec(int64_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v((size_t)n);
  for (auto& x : v) x = (T)rng.uniform(lo, hi);
  return v;
}

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE_TEMPLATE("mm_nn matches serial reference bitwise", T, float, double) {
  Rng rng(11);
  const std::array<std::array<int64_t, 3>, 6> sizes = {
      {{1, 1, 1}, {2, 3, 4}, {5, 7, 3}, {65, 64, 192}, {33, 17, 9}, {128, 31, 57}}};
  for (auto [m, k, n] : sizes) {
    auto a = rand_vec<T>(m * k, rng);
    auto b = rand_vec<T>(k * n, rng);
    for (bool acc : {false, true}) {
      auto c0 = rand_vec<T>(m * n, rng);
      auto c1 = c0;
      pfv::ref::mm_nn(a.data(), b.data(), c0.data(), m, k, n, acc);
      pfv::kern::mm_nn(a.data(), b.data(), c1.data(), m, k, n, acc);
      CHECK(bitwise_equal(c0, c1));
    }
  }
}

TEST_CASE_TEMPLATE("mm_tn matches serial reference bitwise", T, float, double) {
  Rng rng(12);
  const std::array<std::array<int64_t, 3>, 4> sizes = {
      {{1, 1, 1}, {4, 3, 5}, {64, 48, 32}, {100, 17, 23}}};
  for (auto [m, k, n] : sizes) {
    auto a = rand_vec<T>(m * k, rng);
    auto b = rand_vec<T>(m * n, rng);
    for (bool acc : {false, true}) {
      auto c0 = rand_vec<T>(k * n, rng);
      auto c1 = c0;
      pfv::ref::mm_tn(a.data(), b.data(), c0.data(), m, k, n, acc);
      pfv::kern::mm_tn(a.data(), b.data(), c1.data(), m, k, n, acc);
      CHECK(bitwise_equal(c0, c1));
    }
  }
}

TEST_CASE_TEMPLATE("batched matmuls match serial reference bitwise", T, float, double) {
  Rng rng(13);
  int64_t g = 6, m = 9, k = 8, n = 11;
  auto a = rand_vec<T>(g * m * k, rng);
  auto b = rand_vec<T>(g * k * n, rng);
  std::vector<T> c0((size_t)(g * m * n)), c1(c0.size());
  pfv::ref::bmm_nn(a.data(), b.data(), c0.data(), g, m, k, n, false);
  pfv::kern::bmm_nn(a.data(), b.data(), c1.data(), g, m, k, n, false);
  CHECK(bitwise_equal(c0, c1));

  // bmm_nt: (g,m,n) @ (g,k,n)^T -> (g,m,k)
  auto p = rand_vec<T>(g * m * n, rng);
  auto q = rand_vec<T>(g * k * n, rng);
  std::vector<T> r0((size_t)(g * m * k)), r1(r0.size());
  pfv::ref::bmm_nt(p.data(), q.data(), r0.data(), g, m, n, k, false);
  pfv::kern::bmm_nt(p.data(), q.data(), r1.data(), g, m, n, k, false);
  CHECK(bitwise_equal(r0, r1));

  // bmm_tn: (g,m,k)^T @ (g,m,n) -> (g,k,n)
  std::vector<T> s0((size_t)(g * k * n)), s1(s0.size());
  pfv::ref::bmm_tn(a.data(), p.data(), s0.data(), g, m, k, n, false);
  pfv::kern::bmm_tn(a.data(), p.data(), s1.data(), g, m, k, n, false);
  CHECK(bitwise_equal(s0, s1));
}

TEST_CASE_TEMPLATE("transpose2d matches serial reference bitwise", T, float, double) {
  Rng rng(14);
  auto a = rand_vec<T>(37 * 21, rng);
  std::vector<T> t0((size_t)(37 * 21)), t1(t0.size());
  pfv::ref::transpose2d(a.data(), t0.data(), 37, 21);
  pfv::kern::transpose2d(a.data(), t1.data(), 37, 21);
  CHECK(bitwise_equal(t0, t1));
}

TEST_CASE_TEMPLATE("softmax_rows matches serial reference bitwise and sums to 1", T, float,
                   double) {
  Rng rng(15);
  int64_t rows = 130, cols = 65;
  auto x = rand_vec<T>(rows * cols, rng, -8.0, 8.0);
  std::vector<T> y0(x.size()), y1(x.size());
  pfv::ref::softmax_rows(x.data(), y0.data(), rows, cols);
  pfv::kern::softmax_rows(x.data(), y1.data(), rows, cols);
  CHECK(bitwise_equal(y0, y1));
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0;
    for (int64_t j = 0; j < cols; ++j) s += (double)y1[(size_t)(r * cols + j)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  // backward
  auto dy = rand_vec<T>(rows * cols, rng);
  std::vector<T> dx0(x.size(), T(0.25)), dx1(x.size(), T(0.25));
  pfv::ref::softmax_rows_backward(y0.data(), dy.data(), dx0.data(), rows, cols, true);
  pfv::kern::softmax_rows_backward(y1.data(), dy.data(), dx1.data(), rows, cols, true);
  CHECK(bitwise_equal(dx0, dx1));
}

TEST_CASE_TEMPLATE("layernorm_rows matches serial reference bitwise, normalizes rows", T, float,
                   double) {
  Rng rng(16);
  int64_t rows = 97, cols = 48;
  auto x = rand_vec<T>(rows * cols, rng, -3.0, 5.0);
  std::vector<T> y0(x.size()), y1(x.size());
  std::vector<T> m0((size_t)rows), m1((size_t)rows), r0((size_t)rows), r1((size_t)rows);
  T eps = (T)1e-6;
  pfv::ref::layernorm_rows(x.data(), y0.data(), m0.data(), r0.data(), rows, cols, eps);
  pfv::kern::layernorm_rows(x.data(), y1.data(), m1.data(), r1.data(), rows, cols, eps);
  CHECK(bitwise_equal(y0, y1));
  CHECK(bitwise_equal(m0, m1));
  CHECK(bitwise_equal(r0, r1));
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0, var = 0;
    for (int64_t j = 0; j < cols; ++j) mean += (double)y1[(size_t)(r * cols + j)];
    mean /= (double)cols;
    for (int64_t j = 0; j < cols; ++j) {
      double d = (double)y1[(size_t)(r * cols + j)] - mean;
      var += d * d;
    }
    var /= (double)cols;
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  auto dy = rand_vec<T>(rows * cols, rng);
  std::vector<T> dx0(x.size(), T(0.5)), dx1(x.size(), T(0.5));
  pfv::ref::layernorm_rows_backward(x.data(), m0.data(), r0.data(), dy.data(), dx0.data(), rows,
                                    cols, true);
  pfv::kern::layernorm_rows_backward(x.data(), m1.data(), r1.data(), dy.data(), dx1.data(), rows,
                                     cols, true);
  CHECK(bitwise_equal(dx0, dx1));
}

TEST_CASE_TEMPLATE("reduce_sum: bitwise vs reference below block size, close above", T, float,
                   double) {
  Rng rng(17);
  for (int64_t n : {1LL, 5LL, 999LL, 4096LL}) {
    auto x = rand_vec<T>(n, rng);
    T a = pfv::ref::reduce_sum(x.data(), n);
    T b = pfv::kern::reduce_sum(x.data(), n);
    CHECK(std::memcmp(&a, &b, sizeof(T)) == 0);
  }
  for (int64_t n : {4097LL, 100000LL}) {
    auto x = rand_vec<T>(n, rng);
    double a = (double)pfv::ref::reduce_sum(x.data(), n);
    double b = (double)pfv::kern::reduce_sum(x.data(), n);
    double scale = std::max(1.0, std::fabs(a));
    CHECK(std::fabs(a - b) / scale < (sizeof(T) == 4 ? 1e-4 : 1e-10));
  }
}

TEST_CASE("kernel output is invariant to thread count") {
  Rng rng(18);
  int64_t m = 120, k = 48, n = 72;
  auto a = rand_vec<float>(m * k, rng);
  auto b = rand_vec<float>(k * n, rng);
  auto x = rand_vec<float>(m * n, rng);

  int saved = omp_get_max_threads();
  std::vector<std::vector<float>> outs;
  std::vector<float> sums;
  for (int threads : {1, 3, 8}) {
    omp_set_num_threads(threads);
    std::vector<float> c((size_t)(m * n));
    pfv::kern::mm_nn(a.data(), b.data(), c.data(), m, k, n, false);
    outs.push_back(std::move(c));
    sums.push_back(pfv::kern::reduce_sum(x.data(), m * n));
  }
  omp_set_num_threads(saved);
  for (size_t i = 1; i < outs.size(); ++i) {
    CHECK(bitwise_equal(outs[0], outs[i]));
    CHECK(std::memcmp(&sums[0], &sums[i], sizeof(float)) == 0);
  }
}
