#include "cdlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace cdlab {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : engine_(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) + 0xd1b54a32d192ed03ULL * (tag + 1));
}

Vec2 counter_normal2(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t k = splitmix64(splitmix64(seed ^ 0x5851f42d4c957f2dULL) + a);
  const std::uint64_t h1 = splitmix64(k + 0x9e3779b97f4a7c15ULL * (2 * b + 1));
  const std::uint64_t h2 = splitmix64(h1 ^ 0xda942042e4dd58b5ULL);
  // 53-bit uniforms; u1 in (0, 1] keeps the log finite.
  const double u1 = (double(h1 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = double(h2 >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(phi), r * std::sin(phi)};
}

}  // namespace cdlab
