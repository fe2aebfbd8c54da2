#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace geomerge {

// Philox4x32-10 counter-based generator (Salmon et al., Random123). Output is
// a pure function of (counter, key), so any coordinate's draw can be computed
// independently of scheduling.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Uniform [0, 1) draws addressed by (seed, tensor name, stream, index).
/// `stream` separates the task vectors of one tensor.
class CoordinateRng {
 public:
  CoordinateRng(std::uint64_t seed, std::string_view tensor_name, std::uint32_t stream)
      : stream_(stream) {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(fnv1a64(tensor_name)));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  double uniform(std::uint64_t index) const {
    const auto out = Philox4x32::generate(
        {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream_, 0}, key_);
    const std::uint64_t bits = (std::uint64_t{out[0]} << 32) | out[1];
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

 private:
  Philox4x32::Key key_{};
  std::uint32_t stream_;
};

}  // namespace geomerge
