#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "pifm/common.hpp"

namespace pifm {

/// Deterministic seeded random stream: xoshiro256++ state derived from
/// (seed, stream-id) via splitmix64. Identical (seed, stream, draw index)
/// gives identical output on any platform; the standard library engines
/// are never used for anything that feeds metrics.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream_id);

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal via Marsaglia polar (pairs cached).
  double normal();

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  /// Child stream keyed by a label; independent of draws made so far.
  RngStream fork(std::string_view label) const;

 private:
  RngStream() = default;
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t origin_ = 0;  // hash of (seed, stream-id), used by fork
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pifm
