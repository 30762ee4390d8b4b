#pragma once

// Reproducible random streams.
//
// Base generator: Philox4x32-10 (counter-based). The 64-bit seed is the key
// and the 64-bit stream id occupies the upper half of the counter, so
// sub-streams are derived rather than shared and can be evaluated in any
// order. Uniforms use the top 53 bits of a 64-bit word; Gaussians use the
// inverse normal CDF (rational approximation refined by one Halley step).

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace noisecouple {

struct RngIdentity {
  std::string_view family;
  int version;
  std::string_view gaussian_transform;
};

/// Recorded in export metadata; bump `version` whenever the output sequence changes.
inline constexpr RngIdentity kRngIdentity{"philox4x32-10", 1, "inverse-cdf-acklam-halley"};

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key);
};

/// Standard normal quantile function, accurate to ~1 ulp-level refinement.
double inverse_normal_cdf(double p);

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Same seed, stream id offset by `offset`.
  RandomStream substream(std::uint64_t offset) const { return RandomStream(seed_, stream_id_ + offset); }

  std::uint64_t next_u64();
  /// Uniform in the open interval (0, 1).
  double uniform();
  double normal();
  void fill_normal(std::span<double> out);
  /// +1 or -1 with equal probability.
  double rademacher();

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t block_index_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
};

}  // namespace noisecouple
