// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "scalabl/tensor.hpp"

namespace scalabl {

/// Counter-based random stream (Philox4x32-10).
///
/// Every draw is a pure function of (seed, stream_id, counter), so a stream
/// can be checkpointed by its three integers and split into children without
/// any shared state between threads.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Child stream with the same seed and a stream id derived from (stream_id, child).
  RngStream split(std::uint64_t child) const;

  /// One Philox block; advances the counter by one.
  std::array<std::uint32_t, 4> next_block();
  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

/// i.i.d. N(0, 1) tensor. Each Philox block yields two Box-Muller draws.
Tensor standard_normal(RngStream& rng, Shape shape);
/// i.i.d. U(lo, hi) tensor.
Tensor uniform_tensor(RngStream& rng, Shape shape, double lo, double hi);

/// Stable 64-bit mix used to derive stream ids from labels.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t stream_id_for(const char* label);

}  // namespace scalabl
