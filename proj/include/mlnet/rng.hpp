#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mlnet {

// Deterministic random generator: xoshiro256++ seeded through splitmix64.
// The draw sequence depends only on the seed, not on the platform or the
// standard library, which is what makes fixed-seed runs bit-reproducible.
class RngState {
 public:
  static constexpr std::string_view algorithm = "xoshiro256++/splitmix64";

  explicit RngState(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). Multiply-shift map of a full 64-bit draw;
  // bias is on the order of n / 2^64.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Independent child stream, e.g. one per image index so that parallel and
  // serial metric evaluation draw identical numbers.
  RngState derive(std::uint64_t stream) const {
    std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    return RngState(splitmix64(x));
  }

 private:
  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
};

}  // namespace mlnet
