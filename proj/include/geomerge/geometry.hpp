#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "geomerge/checkpoint.hpp"

namespace geomerge {

/// A flattened weight tensor split into its unit direction and Frobenius norm.
struct SphereProjection {
  std::vector<double> direction;
  double magnitude = 0.0;
};

struct GeodesicParams {
  double lambda = 0.6;
  // Below this angle sin(theta) is too small to divide by; fall back to lerp.
  double collinear_threshold = 1e-7;
  // Margin below pi at which the great circle through the inputs is not unique.
  double antipodal_threshold = 1e-6;

  void validate() const;
};

enum class Fallback { None, CollinearLerp, CopiedThrough };

std::string_view to_string(Fallback f);

struct GeometryStats {
  std::string tensor_name;
  double norm_a = 0.0;
  double norm_b = 0.0;
  double theta_radians = 0.0;
  Fallback fallback = Fallback::None;
  double merged_norm = 0.0;
};

// Throws ZeroNormTensor for norms below this.
inline constexpr double kZeroNorm = 1e-30;

/// Compensated dot product.
double dot(std::span<const double> a, std::span<const double> b);
double frobenius_norm(std::span<const double> w);

SphereProjection project_to_sphere(std::span<const double> w);

/// Angle in [0, pi] between two unit directions.
double angle_between(std::span<const double> a, std::span<const double> b);
double angle_between(const SphereProjection& a, const SphereProjection& b);

/// Geodesic interpolation on the unit sphere. `a` is reached at lambda = 1
/// and `b` at lambda = 0; the result has unit norm.
std::pair<std::vector<double>, GeometryStats> slerp(const SphereProjection& a, const SphereProjection& b,
                                                    const GeodesicParams& params);

/// Scales a unit direction by norm_a^lambda * norm_b^(1 - lambda).
std::vector<double> rescale(std::span<const double> merged_direction, double norm_a, double norm_b,
                            double lambda);

struct GeodesicResult {
  std::vector<double> values;
  GeometryStats stats;
};

/// Project, interpolate along the great circle, and restore magnitude.
GeodesicResult geodesic_merge(std::span<const double> w_a, std::span<const double> w_b,
                              const GeodesicParams& params, std::string_view name = {});

/// Record-level wrapper. The merged tensor is returned in F64.
std::pair<TensorRecord, GeometryStats> geodesic_merge_tensor(const TensorRecord& w_a, const TensorRecord& w_b,
                                                             const GeodesicParams& params);

}  // namespace geomerge
