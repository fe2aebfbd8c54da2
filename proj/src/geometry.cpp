#include "geomerge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geomerge/error.hpp"

namespace geomerge {

namespace {

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b)
    throw Error(ErrorCode::ShapeMismatch,
                "operands have " + std::to_string(a) + " and " + std::to_string(b) + " elements");
}

void normalize_in_place(std::vector<double>& v) {
  const double n = frobenius_norm(v);
  for (auto& x : v) x /= n;
}

}  // namespace

std::string_view to_string(Fallback f) {
  switch (f) {
    case Fallback::None: return "None";
    case Fallback::CollinearLerp: return "CollinearLerp";
    case Fallback::CopiedThrough: return "CopiedThrough";
  }
  return "?";
}

void GeodesicParams::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::InvalidRecipe, "lambda must lie in [0, 1], got " + std::to_string(lambda));
  if (!(collinear_threshold > 0.0) || !(antipodal_threshold > 0.0) ||
      collinear_threshold >= std::numbers::pi - antipodal_threshold)
    throw Error(ErrorCode::InvalidRecipe, "singularity thresholds must be positive and leave a usable range");
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size());
  // Neumaier summation of exact products (fma recovers the product error).
  double sum = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double p = a[i] * b[i];
    const double perr = std::fma(a[i], b[i], -p);
    const double t = sum + p;
    if (std::abs(sum) >= std::abs(p))
      comp += (sum - t) + p;
    else
      comp += (p - t) + sum;
    sum = t;
    comp += perr;
  }
  return sum + comp;
}

double frobenius_norm(std::span<const double> w) { return std::sqrt(dot(w, w)); }

namespace {

double checked_norm(std::span<const double> w) {
  if (w.empty()) throw Error(ErrorCode::ZeroNormTensor, "cannot project an empty tensor");
  const double n = frobenius_norm(w);
  if (!(n >= kZeroNorm))
    throw Error(ErrorCode::ZeroNormTensor, "Frobenius norm " + std::to_string(n) + " is too small to normalise");
  return n;
}

}  // namespace

SphereProjection project_to_sphere(std::span<const double> w) {
  const double n = checked_norm(w);
  SphereProjection p;
  p.magnitude = n;
  p.direction.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) p.direction[i] = w[i] / n;
  return p;
}

double angle_between(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size());
  // 2*atan2(|a-b|, |a+b|) equals arccos(<a,b>) for unit vectors but keeps
  // full relative accuracy near 0 and pi, where arccos loses half the digits.
  double diff = 0.0, sum = 0.0, dcomp = 0.0, scomp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    const double s = a[i] + b[i];
    const double yd = std::fma(d, d, -dcomp);
    const double td = diff + yd;
    dcomp = (td - diff) - yd;
    diff = td;
    const double ys = std::fma(s, s, -scomp);
    const double ts = sum + ys;
    scomp = (ts - sum) - ys;
    sum = ts;
  }
  const double theta = 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
  return std::clamp(theta, 0.0, std::numbers::pi);
}

double angle_between(const SphereProjection& a, const SphereProjection& b) {
  return angle_between(a.direction, b.direction);
}

namespace {

// Unit vector at fraction lambda of the way from y's direction to x's, built
// from x and the part of y orthogonal to it. The inputs need not be unit
// length. Coefficients stay bounded, so nearly opposite inputs do not cancel.
std::vector<double> tangent_slerp(std::span<const double> x, std::span<const double> y,
                                  const GeodesicParams& params, GeometryStats& stats) {
  const double xx = dot(x, x);
  const double nx = std::sqrt(xx);
  const double c = dot(x, y) / xx;
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::fma(-c, x[i], y[i]);
  const double c2 = dot(w, x) / xx;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::fma(-c2, x[i], w[i]);
  const double nw = frobenius_norm(w);
  const double theta = std::atan2(nw, (c + c2) * nx);
  stats.theta_radians = theta;

  if (theta > std::numbers::pi - params.antipodal_threshold)
    throw Error(ErrorCode::AntipodalDirections,
                "angle " + std::to_string(theta) + " rad is within the antipodal margin of pi");

  const double lam = params.lambda;
  std::vector<double> out(x.size());
  if (theta < params.collinear_threshold) {
    stats.fallback = Fallback::CollinearLerp;
    const double ny = frobenius_norm(y);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lam * (x[i] / nx) + (1.0 - lam) * (y[i] / ny);
  } else {
    const double phi = (1.0 - lam) * theta;
    const double cx = std::cos(phi) / nx;
    const double cw = std::sin(phi) / nw;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cx * x[i] + cw * w[i];
  }
  normalize_in_place(out);
  return out;
}

}  // namespace

std::pair<std::vector<double>, GeometryStats> slerp(const SphereProjection& a, const SphereProjection& b,
                                                    const GeodesicParams& params) {
  params.validate();
  require_same_length(a.direction.size(), b.direction.size());
  GeometryStats stats;
  stats.norm_a = a.magnitude;
  stats.norm_b = b.magnitude;
  auto out = tangent_slerp(a.direction, b.direction, params, stats);
  stats.merged_norm = 1.0;
  return {std::move(out), std::move(stats)};
}

std::vector<double> rescale(std::span<const double> merged_direction, double norm_a, double norm_b,
                            double lambda) {
  if (!(norm_a > 0.0) || !(norm_b > 0.0))
    throw Error(ErrorCode::ZeroNormTensor, "rescale requires positive norms");
  const double scale = std::pow(norm_a, lambda) * std::pow(norm_b, 1.0 - lambda);
  std::vector<double> out(merged_direction.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = merged_direction[i] * scale;
  return out;
}

GeodesicResult geodesic_merge(std::span<const double> w_a, std::span<const double> w_b,
                              const GeodesicParams& params, std::string_view name) {
  require_same_length(w_a.size(), w_b.size());
  params.validate();
  const double pa = checked_norm(w_a);
  const double pb = checked_norm(w_b);

  GeodesicResult r;
  if (std::equal(w_a.begin(), w_a.end(), w_b.begin())) {
    // Merging a tensor with itself is the identity; skip the round trip
    // through the sphere so the result is bit-exact.
    r.values.assign(w_a.begin(), w_a.end());
    r.stats.norm_a = r.stats.norm_b = r.stats.merged_norm = pa;
    r.stats.fallback = Fallback::CollinearLerp;
  } else {
    // Work from the raw tensors rather than the rounded projections: near pi
    // the result is sensitive to the last bit of each input.
    r.stats.norm_a = pa;
    r.stats.norm_b = pb;
    auto direction = tangent_slerp(w_a, w_b, params, r.stats);
    if (params.lambda == 1.0 || params.lambda == 0.0)
      r.values.assign(params.lambda == 1.0 ? w_a.begin() : w_b.begin(), params.lambda == 1.0 ? w_a.end() : w_b.end());
    else
      r.values = rescale(direction, pa, pb, params.lambda);
    r.stats.merged_norm = frobenius_norm(r.values);
  }
  r.stats.tensor_name = std::string(name);
  return r;
}

std::pair<TensorRecord, GeometryStats> geodesic_merge_tensor(const TensorRecord& w_a, const TensorRecord& w_b,
                                                             const GeodesicParams& params) {
  if (w_a.shape != w_b.shape)
    throw Error(ErrorCode::ShapeMismatch, w_a.name + ": shapes " + shape_to_string(w_a.shape) + " and " +
                                              shape_to_string(w_b.shape) + " differ");
  const auto va = w_a.values();
  const auto vb = w_b.values();
  auto r = geodesic_merge(va, vb, params, w_a.name);
  auto out = TensorRecord::from_values(w_a.name, DType::F64, w_a.shape, r.values);
  return {std::move(out), std::move(r.stats)};
}

}  // namespace geomerge
