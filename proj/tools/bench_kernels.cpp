// Compares the OpenMP kernels against the serial reference implementation:
// checks bitwise agreement on every case, then reports throughput for both.
// Usage: bench_kernels [reps]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <omp.h>

#include "pfv/kernels.hpp"
#include "pfv/ref_kernels.hpp"
#include "pfv/rng.hpp"

namespace {

double now_sec() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<float> random_vec(int64_t n, pfv::Rng& rng) {
  std::vector<float> v((size_t)n);
  for (auto& x : v) x = (float)rng.uniform(-1.0, 1.0);
  return v;
}

struct Case {
  const char* name;
  int64_t m, k, n;
};

}  // namespace

int main(int argc, char** argv) {
  int reps = argc > 1 ? std::atoi(argv[1]) : 20;
  pfv::Rng rng(7);

  printf("threads available: %d\n", omp_get_max_threads());
  printf("%-28s %10s %12s %12s %8s\n", "case", "gflop", "ref GF/s", "omp GF/s", "speedup");

  const Case cases[] = {
      {"mm_nn 1040x64x64", 1040, 64, 64},
      {"mm_nn 1040x64x256", 1040, 64, 256},
      {"mm_nn 65x64x192", 65, 64, 192},
      {"mm_nn 512x512x512", 512, 512, 512},
      {"mm_tn 1040x64x64", 1040, 64, 64},
      {"mm_tn 1040x256x64", 1040, 256, 64},
  };

  for (const auto& c : cases) {
    bool tn = std::strncmp(c.name, "mm_tn", 5) == 0;
    auto a = random_vec(c.m * c.k, rng);
    auto b = random_vec(tn ? c.m * c.n : c.k * c.n, rng);
    std::vector<float> out_ref((size_t)(tn ? c.k * c.n : c.m * c.n));
    std::vector<float> out_omp(out_ref.size());

    if (tn) {
      pfv::ref::mm_tn(a.data(), b.data(), out_ref.data(), c.m, c.k, c.n, false);
      pfv::kern::mm_tn(a.data(), b.data(), out_omp.data(), c.m, c.k, c.n, false);
    } else {
      pfv::ref::mm_nn(a.data(), b.data(), out_ref.data(), c.m, c.k, c.n, false);
      pfv::kern::mm_nn(a.data(), b.data(), out_omp.data(), c.m, c.k, c.n, false);
    }
    if (std::memcmp(out_ref.data(), out_omp.data(), out_ref.size() * sizeof(float)) != 0) {
      printf("%-28s BITWISE MISMATCH\n", c.name);
      return 1;
    }

    double flop = 2.0 * (double)c.m * c.k * c.n;
    double t0 = now_sec();
    for (int r = 0; r < reps; ++r) {
      if (tn)
        pfv::ref::mm_tn(a.data(), b.data(), out_ref.data(), c.m, c.k, c.n, false);
      else
        pfv::ref::mm_nn(a.data(), b.data(), out_ref.data(), c.m, c.k, c.n, false);
    }
    double t_ref = (now_sec() - t0) / reps;
    t0 = now_sec();
    for (int r = 0; r < reps; ++r) {
      if (tn)
        pfv::kern::mm_tn(a.data(), b.data(), out_omp.data(), c.m, c.k, c.n, false);
      else
        pfv::kern::mm_nn(a.data(), b.data(), out_omp.data(), c.m, c.k, c.n, false);
    }
    double t_omp = (now_sec() - t0) / reps;
    printf("%-28s %10.3f %12.2f %12.2f %7.2fx\n", c.name, flop * 1e-9, flop / t_ref * 1e-9,
           flop / t_omp * 1e-9, t_ref / t_omp);
  }

  // Row-wise kernels.
  {
    int64_t rows = 4160, cols = 65;
    auto x = random_vec(rows * cols, rng);
    std::vector<float> y_ref(x.size()), y_omp(x.size());
    pfv::ref::softmax_rows(x.data(), y_ref.data(), rows, cols);
    pfv::kern::softmax_rows(x.data(), y_omp.data(), rows, cols);
    if (std::memcmp(y_ref.data(), y_omp.data(), x.size() * sizeof(float)) != 0) {
      printf("softmax_rows BITWISE MISMATCH\n");
      return 1;
    }
    double t0 = now_sec();
    for (int r = 0; r < reps; ++r) pfv::ref::softmax_rows(x.data(), y_ref.data(), rows, cols);
    double t_ref = (now_sec() - t0) / reps;
    t0 = now_sec();
    for (int r = 0; r < reps; ++r) pfv::kern::softmax_rows(x.data(), y_omp.data(), rows, cols);
    double t_omp = (now_sec() - t0) / reps;
    printf("%-28s %10s %12.2f %12.2f %7.2fx  (Melem/s)\n", "softmax_rows 4160x65", "-",
           rows * cols / t_ref * 1e-6, rows * cols / t_omp * 1e-6, t_ref / t_omp);
  }

  printf("all bitwise checks passed\n");
  return 0;
}
