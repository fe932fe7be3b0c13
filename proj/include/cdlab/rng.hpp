#pragma once

#include <cstdint>
#include <random>

#include "cdlab/linalg.hpp"

namespace cdlab {

std::uint64_t splitmix64(std::uint64_t x);

/// SplitMix64 as a UniformRandomBitGenerator: one 64-bit word of state, so
/// constructing a stream per sample costs nothing.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t state = 0) : state_(state) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Independent random stream addressed by (seed, stream index). Every
/// per-sample kernel draws from its own stream, so results do not depend on
/// how samples are distributed over threads.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }
  Vec2 normal2() {
    const double a = normal_(engine_);
    const double b = normal_(engine_);
    return {a, b};
  }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  SplitMix64& engine() { return engine_; }

 private:
  SplitMix64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Standard normal pair addressed by (seed, a, b) without generator state.
/// Used by time-outer batched kernels where keeping one engine per sample
/// would be too heavy: noise for sample a at step b is a pure function.
Vec2 counter_normal2(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

/// Derive a child seed, e.g. one per dual round or per module.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace cdlab
