#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

#include "geomerge/philox.hpp"

namespace geomerge::testkit {

Real oracle_norm(std::span<const double> w) {
  Real s = 0;
  for (double x : w) s += static_cast<Real>(x) * static_cast<Real>(x);
  return std::sqrt(s);
}

namespace {

// Half-chord form: acos loses everything near 0 and pi.
Real unit_angle(const std::vector<Real>& u, const std::vector<Real>& v) {
  Real diff = 0, sum = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    diff += (u[i] - v[i]) * (u[i] - v[i]);
    sum += (u[i] + v[i]) * (u[i] + v[i]);
  }
  diff = std::sqrt(diff);
  sum = std::sqrt(sum);
  if (diff <= sum) return 2 * std::asin(std::min(Real(1), diff / 2));
  return std::numbers::pi_v<Real> - 2 * std::asin(std::min(Real(1), sum / 2));
}

std::vector<Real> unit(std::span<const double> x, Real norm) {
  std::vector<Real> u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) u[i] = static_cast<Real>(x[i]) / norm;
  return u;
}

}  // namespace

Real oracle_angle(std::span<const double> a, std::span<const double> b) {
  return unit_angle(unit(a, oracle_norm(a)), unit(b, oracle_norm(b)));
}

std::vector<double> oracle_geodesic(std::span<const double> w_a, std::span<const double> w_b, double lambda) {
  if (w_a.size() != w_b.size()) throw OracleDomain("length mismatch");
  const std::size_t n = w_a.size();
  const Real norm_chip = oracle_norm(w_a);
  const Real norm_instruct = oracle_norm(w_b);
  if (norm_chip == 0 || norm_instruct == 0) throw OracleDomain("zero norm");

  const auto chip = unit(w_a, norm_chip);
  const auto instruct = unit(w_b, norm_instruct);
  const Real theta = unit_angle(chip, instruct);
  const Real pi = std::numbers::pi_v<Real>;
  if (theta < Real(1e-12) || theta > pi - Real(1e-12)) throw OracleDomain("angle too close to 0 or pi");

  const Real lam = lambda;
  const Real c_chip = std::sin(lam * theta) / std::sin(theta);
  const Real c_instruct = std::sin((1 - lam) * theta) / std::sin(theta);
  const Real scale = std::pow(norm_chip, lam) * std::pow(norm_instruct, 1 - lam);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<double>(scale * (c_chip * chip[i] + c_instruct * instruct[i]));
  return out;
}

std::vector<double> oracle_linear(std::span<const double> w_a, std::span<const double> w_b, double lambda) {
  std::vector<double> out(w_a.size());
  const Real lam = lambda;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<double>(lam * w_a[i] + (1 - lam) * w_b[i]);
  return out;
}

std::vector<double> oracle_task_arithmetic(std::span<const double> w_a, std::span<const double> w_b,
                                           std::span<const double> w_base, double scaling) {
  std::vector<double> out(w_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real base = w_base[i];
    const Real mean_delta = ((w_a[i] - base) + (w_b[i] - base)) / 2;
    out[i] = static_cast<double>(base + Real(scaling) * mean_delta);
  }
  return out;
}

std::vector<double> oracle_trim(std::span<const double> tau, double density) {
  const std::size_t n = tau.size();
  // Exact ceil(density * n) via long double, then snapped like the spec'd count.
  const Real x = static_cast<Real>(density) * static_cast<Real>(n);
  std::size_t k = static_cast<std::size_t>(std::ceil(x - Real(1e-9)));
  k = std::min(k, n);
  std::vector<std::tuple<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < n; ++i) keyed.emplace_back(-std::abs(tau[i]), i);
  std::sort(keyed.begin(), keyed.end());
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    const auto i = std::get<1>(keyed[r]);
    out[i] = tau[i];
  }
  return out;
}

std::vector<double> oracle_ties(const std::vector<std::vector<double>>& taus, std::span<const double> w_base,
                                double scaling) {
  std::vector<double> out(w_base.begin(), w_base.end());
  for (std::size_t j = 0; j < out.size(); ++j) {
    Real total = 0;
    for (const auto& t : taus) total += t[j];
    const int sign = total > 0 ? 1 : (total < 0 ? -1 : 0);
    if (sign == 0) continue;
    Real acc = 0;
    int count = 0;
    for (const auto& t : taus) {
      const int s = t[j] > 0 ? 1 : (t[j] < 0 ? -1 : 0);
      if (s == sign) {
        acc += t[j];
        ++count;
      }
    }
    const Real delta = count ? acc / count : 0;
    out[j] = static_cast<double>(w_base[j] + Real(scaling) * delta);
  }
  return out;
}

std::vector<double> oracle_della_drop(std::span<const double> tau, double density, double epsilon,
                                      std::uint64_t seed, std::string_view name, std::uint32_t task) {
  const std::size_t n = tau.size();
  std::vector<std::tuple<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < n; ++i) keyed.emplace_back(std::abs(tau[i]), i);
  std::sort(keyed.begin(), keyed.end());
  const CoordinateRng rng(seed, name, task);
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = std::get<1>(keyed[r]);
    // Linear ramp from density - epsilon to density + epsilon over ranks.
    const double p = n == 1 ? density
                            : static_cast<double>(Real(density) - Real(epsilon) +
                                                  Real(2) * Real(epsilon) * Real(r) / Real(n - 1));
    if (p <= 0) continue;
    const bool keep = p >= 1 || rng.uniform(i) < p;
    if (keep) out[i] = tau[i] / std::min(p, 1.0);
  }
  return out;
}

std::vector<double> oracle_della(const std::vector<std::vector<double>>& taus, std::span<const double> w_base,
                                 double density, double epsilon, double scaling, std::uint64_t seed,
                                 std::string_view name) {
  std::vector<std::vector<double>> dropped;
  for (std::size_t t = 0; t < taus.size(); ++t)
    dropped.push_back(oracle_della_drop(taus[t], density, epsilon, seed, name, static_cast<std::uint32_t>(t)));
  return oracle_ties(dropped, w_base, scaling);
}

double max_rel_error(std::span<const double> x, std::span<const double> y) {
  double scale = 0, worst = 0;
  for (double v : y) scale = std::max(scale, std::abs(v));
  if (scale == 0) scale = 1;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]) / scale);
  return worst;
}

}  // namespace geomerge::testkit
