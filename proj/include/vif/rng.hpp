#pragma once

#include <cstdint>
#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

namespace vif {

// Deterministic, platform-independent random stream. The generator core is
// xoshiro256** seeded through splitmix64 from a (seed, stream) pair, and all
// distributions are implemented on top of the raw 64-bit output, so identical
// (seed, stream) pairs replay the exact same draw sequence on any platform.
//
// Parallel work (replicates, features, subsets) should derive disjoint
// substreams instead of sharing one stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    for (auto& w : state_) w = splitmix64(x);
    // Avoid the all-zero state, which xoshiro cannot escape.
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Derive an independent stream identified by an integer.
  RngStream substream(std::uint64_t id) const {
    std::uint64_t x = seed_ ^ (0xbf58476d1ce4e5b9ULL * (stream_ + 0x9e37ULL));
    return RngStream(splitmix64(x), id);
  }

  // Derive an independent stream identified by name ("data", "init", ...).
  RngStream substream(std::string_view name) const { return substream(fnv1a(name)); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in the open interval (0, 1); safe input for log().
  double uniform01_open() {
    double u = uniform01();
    constexpr double lo = 0x1.0p-53;
    if (u < lo) u = lo;
    if (u > 1.0 - lo) u = 1.0 - lo;
    return u;
  }

  double uniform_real(double a, double b) { return a + (b - a) * uniform01(); }

  // Standard normal via the polar (Marsaglia) method with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Gumbel(0,1) draw, -log(-log u), with u kept away from {0,1}.
  double gumbel() { return -std::log(-std::log(uniform01_open())); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % n);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::uint32_t> permutation(std::uint32_t n) {
    std::vector<std::uint32_t> p(n);
    for (std::uint32_t i = 0; i < n; ++i) p[i] = i;
    for (std::uint32_t i = n; i > 1; --i) {
      const std::uint32_t j = static_cast<std::uint32_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vif
