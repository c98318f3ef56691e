#pragma once

#include <cstdint>

#include "zicb/link_functions.hpp"

namespace zicb {

// SplitMix64 stream with substreams derived from (seed, stream index).
// Every draw path is fully specified here so simulated datasets are
// bit-reproducible across platforms and thread counts.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  static SplitMix64 for_stream(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = mix(seed + 0x9E3779B97F4A7C15ULL);
    return SplitMix64(mix(s ^ (0x9E3779B97F4A7C15ULL * (stream + 1))));
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  // Uniform on the open interval (0,1): (k + 0.5) / 2^53.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Inverse-CDF normal draw; keeps the stream advance rate fixed at one
  // 64-bit word per variate.
  double next_normal() { return normal_quantile(next_uniform()); }

  bool next_bernoulli(double p) { return next_uniform() < p; }

 private:
  std::uint64_t state_;
};

}  // namespace zicb
