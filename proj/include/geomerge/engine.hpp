#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geomerge/checkpoint.hpp"
#include "geomerge/geometry.hpp"
#include "geomerge/recipe.hpp"

namespace geomerge {

enum class PlanAction { Merge, Copy, CopyEmpty };

struct PlanEntry {
  std::string name;
  PlanAction action = PlanAction::Merge;
};

/// Per-tensor actions in input_a header order.
struct PairingPlan {
  std::vector<PlanEntry> entries;

  std::size_t count(PlanAction a) const;
};

/// Checks that every filter-selected tensor of `a` exists with the same shape
/// in `b` (and `base`). Tensors no filter selects are planned as copies.
PairingPlan validate_pairing(const Checkpoint& a, const Checkpoint& b, const Checkpoint* base,
                             std::span<const std::string> filters);

enum class TensorAction { Merged, Copied, Skipped };

std::string_view to_string(TensorAction a);

struct TensorOutcome {
  TensorAction action = TensorAction::Merged;
  std::string note;  // why a tensor was copied or skipped
  GeometryStats stats;
};

struct MergeReport {
  std::vector<TensorOutcome> tensors;
  std::size_t merged = 0;
  std::size_t copied = 0;
  std::size_t skipped = 0;
  double wall_time_s = 0.0;
  std::uint64_t peak_tensor_bytes = 0;
  std::uint64_t max_tensor_bytes = 0;
  unsigned threads = 1;
  std::vector<std::string> warnings;
  MergeRecipe recipe;

  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
};

/// Runs one merge end to end: validate, stream tensors through the method,
/// write the output (and the report if the recipe names one).
MergeReport run_merge(const MergeRecipe& recipe);

/// Output name for one sweep point: "dir/merged.st" -> "dir/merged-l0.6.st".
std::filesystem::path sweep_output_path(const std::filesystem::path& out, double lambda);

/// Formats lambda with the shortest round-tripping representation.
std::string format_lambda(double lambda);

struct SweepResult {
  std::vector<double> lambdas;
  std::vector<std::filesystem::path> outputs;
  std::vector<MergeReport> reports;

  nlohmann::json to_json() const;
};

/// One merge per lambda sharing a single validation pass.
SweepResult sweep(const MergeRecipe& recipe, std::span<const double> lambdas);

}  // namespace geomerge
