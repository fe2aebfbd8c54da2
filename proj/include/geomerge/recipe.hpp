#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geomerge/dtype.hpp"
#include "geomerge/methods.hpp"

namespace geomerge {

struct DTypePolicy {
  enum class Kind { PreserveA, PreserveB, Force };
  Kind kind = Kind::PreserveA;
  DType forced = DType::F32;

  DType resolve(DType a, DType b) const;
  std::string to_string() const;
  /// "preserve_a", "preserve_b", or a dtype name ("F16", "f32", ...).
  static DTypePolicy parse(std::string_view s);
};

/// Everything needed to run one merge job.
struct MergeRecipe {
  MergeMethod method = method::Geodesic{};
  std::filesystem::path input_a;  // chip / domain model
  std::filesystem::path input_b;  // instruction model
  std::optional<std::filesystem::path> base;
  std::filesystem::path output;
  std::vector<std::string> tensor_filters;
  DTypePolicy dtype_policy;
  std::uint64_t seed = 0;
  unsigned threads = 1;  // 0 = hardware concurrency
  double collinear_threshold = GeodesicParams{}.collinear_threshold;
  double antipodal_threshold = GeodesicParams{}.antipodal_threshold;
  std::optional<std::filesystem::path> report;

  /// Checks parameter ranges, base presence, and glob syntax. Touches no files.
  void validate() const;
  GeodesicParams geodesic_params(double lambda) const;
  unsigned effective_threads() const;
};

/// One layer of recipe settings. Layers are stacked defaults < file < flags,
/// each later layer overriding any field it sets.
struct RecipeLayer {
  std::optional<std::string> method;
  std::optional<double> lambda, density, epsilon, scaling;
  std::optional<std::string> a, b, base, out, report;
  std::optional<std::vector<std::string>> filters;
  std::optional<std::string> dtype_policy;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> threads;  // integer or "auto"
  std::optional<double> collinear_threshold, antipodal_threshold;

  static RecipeLayer from_json(const nlohmann::json& j);
  static RecipeLayer from_file(const std::filesystem::path& path);
  void overlay(const RecipeLayer& upper);
  MergeRecipe resolve() const;
};

nlohmann::json method_params_json(const MergeMethod& m);
nlohmann::json to_json(const MergeRecipe& r);

/// fnmatch-style glob. Throws InvalidRecipe on an unterminated bracket.
void validate_glob(std::string_view pattern);
bool glob_match(std::string_view pattern, std::string_view name);

}  // namespace geomerge
