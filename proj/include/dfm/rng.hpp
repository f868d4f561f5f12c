#pragma once

#include <cstdint>
#include <string_view>

namespace dfm {

// Counter-based pseudo-random stream. Each (seed, stream) pair yields an
// independent deterministic sequence, and advancing one stream never perturbs
// another, so inserting a new draw site does not reshuffle unrelated results.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double next_double();
  // Uniform on {0, ..., n - 1}; n must be positive.
  std::uint64_t next_below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Stable stream id for purpose-labelled substreams ("chain", "sweep", ...).
// Distinct (purpose, index) pairs map to distinct ids with overwhelming
// probability.
std::uint64_t stream_id(std::string_view purpose, std::uint64_t index);

}  // namespace dfm
