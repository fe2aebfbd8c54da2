#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "geomerge/geometry.hpp"

namespace geomerge {

namespace method {

struct Geodesic {
  double lambda = 0.6;
};
struct Linear {
  double lambda = 0.6;
};
struct TaskArithmetic {
  double scaling = 1.0;
};
struct Ties {
  double density = 0.2;
  double scaling = 1.0;
};
struct Della {
  double density = 0.2;
  double scaling = 1.0;
  double epsilon = 0.1;
};

}  // namespace method

using MergeMethod =
    std::variant<method::Geodesic, method::Linear, method::TaskArithmetic, method::Ties, method::Della>;

std::string_view method_name(const MergeMethod& m);
bool requires_base(const MergeMethod& m);
bool is_lambda_parameterized(const MergeMethod& m);
void validate(const MergeMethod& m);

/// lambda * w_a + (1 - lambda) * w_b
std::vector<double> merge_linear(std::span<const double> w_a, std::span<const double> w_b, double lambda);

/// base + scaling * mean of the two task vectors.
std::vector<double> merge_task_arithmetic(std::span<const double> w_a, std::span<const double> w_b,
                                          std::span<const double> w_base, double scaling);

std::vector<double> task_vector(std::span<const double> w, std::span<const double> w_base);

/// Number of entries kept at `density`: ceil(density * n), with products that
/// land within rounding of an integer treated as that integer.
std::size_t trim_count(double density, std::size_t n);

/// Keeps the trim_count largest-magnitude entries; equal magnitudes favour the
/// lower index.
std::vector<double> trim_task_vector(std::span<const double> tau, double density);

/// Sign election by summed mass followed by the disjoint mean of agreeing
/// entries, added onto the base.
std::vector<double> merge_ties(std::span<const std::vector<double>> taus, std::span<const double> w_base,
                               double scaling);

/// Addresses DELLA's random draws.
struct DropStream {
  std::uint64_t seed = 0;
  std::string_view tensor_name;
  std::uint32_t task = 0;
};

/// Magnitude-ranked keep probabilities from density - epsilon (smallest) to
/// density + epsilon (largest); survivors are divided by their probability.
std::vector<double> della_drop(std::span<const double> tau, double density, double epsilon,
                               const DropStream& stream);

std::vector<double> merge_della(std::span<const std::vector<double>> taus, std::span<const double> w_base,
                                const method::Della& params, std::uint64_t seed, std::string_view tensor_name);

}  // namespace geomerge
