#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace pfv {

// xoshiro256++ seeded through splitmix64. Self-contained so that streams are
// bit-identical across platforms and can be checkpointed mid-run; the standard
// library distributions make no such guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int uniform_int(int n);                // [0, n), unbiased
  double normal();                       // standard normal
  double trunc_normal(double stddev);    // resampled until |x| <= 2*stddev

  void shuffle(std::vector<int>& v);

  // Independent child stream; deterministic function of (state, tag).
  Rng fork(uint64_t tag) const;

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  Rng() = default;
  std::array<uint64_t, 4> s_{};
};

}  // namespace pfv
