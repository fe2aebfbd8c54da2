#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "geomerge/checkpoint.hpp"

namespace geomerge::testkit {

/// Seeded source of doubles that does not depend on the standard library's
/// distribution implementations, so generated files are identical everywhere.
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next() { return eng_(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

 private:
  std::mt19937_64 eng_;
  std::optional<double> spare_;
};

struct WeightedShape {
  Shape shape;
  double weight = 1.0;
};

struct ValueDistribution {
  enum class Kind { StandardNormal, Uniform, Structured };
  Kind kind = Kind::StandardNormal;
  double lo = -1.0, hi = 1.0;                           // Uniform
  double theta = 0.9, norm_a = 1.0, norm_b = 1.0;       // Structured
};

struct SyntheticSpec {
  std::size_t tensor_count = 3;
  std::vector<WeightedShape> shapes = {{{4, 4}, 1.0}};
  DType dtype = DType::F64;
  ValueDistribution values;
  std::uint64_t seed = 1;
  bool with_base = false;
  // Tensor index whose input_a values are all zero (exercises copy-through).
  std::optional<std::size_t> zero_tensor;
};

struct SyntheticTensors {
  std::vector<TensorRecord> a, b, base;
};

struct SyntheticPaths {
  std::filesystem::path a, b;
  std::optional<std::filesystem::path> base;
};

/// Pair of vectors with |a| = norm_a, |b| = norm_b and angle theta, built by
/// Gram-Schmidt in long double.
std::pair<std::vector<double>, std::vector<double>> structured_pair(std::size_t n, double theta, double norm_a,
                                                                    double norm_b, SynthRng& rng);

SyntheticTensors generate_tensors(const SyntheticSpec& spec);

/// Writes <dir>/<stem>_a.safetensors, _b (and _base).
SyntheticPaths generate_checkpoint_pair(const SyntheticSpec& spec, const std::filesystem::path& dir,
                                        const std::string& stem = "synth");

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& tag);

}  // namespace geomerge::testkit
