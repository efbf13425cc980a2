#include "pfv/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace pfv {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  // 53 high bits -> double in [0, 1).
  return (double)(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::runtime_error("uniform_int: n must be positive");
  uint64_t un = (uint64_t)n;
  uint64_t mask = ~0ULL;
  if (un > 1) {
    mask = un - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
  } else {
    return 0;
  }
  for (;;) {
    uint64_t r = next_u64() & mask;
    if (r < un) return (int)r;
  }
}

double Rng::normal() {
  // Box-Muller, cosine branch only: one normal per two uniforms, no cached
  // spare, so the stream position is a pure function of draw count.
  for (;;) {
    double u1 = uniform();
    if (u1 <= 0.0) continue;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
}

double Rng::trunc_normal(double stddev) {
  for (;;) {
    double x = normal();
    if (std::fabs(x) <= 2.0) return x * stddev;
  }
}

void Rng::shuffle(std::vector<int>& v) {
  for (int i = (int)v.size() - 1; i > 0; --i) {
    int j = uniform_int(i + 1);
    std::swap(v[i], v[(size_t)j]);
  }
}

Rng Rng::fork(uint64_t tag) const {
  Rng child;
  uint64_t x = s_[0] ^ rotl(s_[3], 17) ^ (tag * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL);
  for (auto& s : child.s_) s = splitmix64(x);
  return child;
}

}  // namespace pfv
