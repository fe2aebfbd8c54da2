#include "geomerge/methods.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geomerge/error.hpp"
#include "geomerge/philox.hpp"

namespace geomerge {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b)
    throw Error(ErrorCode::ShapeMismatch,
                "operands have " + std::to_string(a) + " and " + std::to_string(b) + " elements");
}

void check_unit_interval(double v, const char* what, bool open_low) {
  const bool ok = open_low ? (v > 0.0 && v <= 1.0) : (v >= 0.0 && v <= 1.0);
  if (!ok) throw Error(ErrorCode::InvalidRecipe, std::string(what) + " out of range: " + std::to_string(v));
}

void check_scaling(double s) {
  if (!(s > 0.0) || !std::isfinite(s))
    throw Error(ErrorCode::InvalidRecipe, "scaling must be positive, got " + std::to_string(s));
}

// Indices ordered by descending magnitude, ties by ascending index.
struct ByMagnitudeDesc {
  std::span<const double> v;
  bool operator()(std::size_t i, std::size_t j) const {
    const double a = std::abs(v[i]), b = std::abs(v[j]);
    return a > b || (a == b && i < j);
  }
};

}  // namespace

std::string_view method_name(const MergeMethod& m) {
  return std::visit(overloaded{[](const method::Geodesic&) { return "geodesic"; },
                               [](const method::Linear&) { return "linear"; },
                               [](const method::TaskArithmetic&) { return "task_arithmetic"; },
                               [](const method::Ties&) { return "ties"; },
                               [](const method::Della&) { return "della"; }},
                    m);
}

bool requires_base(const MergeMethod& m) {
  return std::holds_alternative<method::TaskArithmetic>(m) || std::holds_alternative<method::Ties>(m) ||
         std::holds_alternative<method::Della>(m);
}

bool is_lambda_parameterized(const MergeMethod& m) {
  return std::holds_alternative<method::Geodesic>(m) || std::holds_alternative<method::Linear>(m);
}

void validate(const MergeMethod& m) {
  std::visit(overloaded{[](const method::Geodesic& g) { check_unit_interval(g.lambda, "lambda", false); },
                        [](const method::Linear& l) { check_unit_interval(l.lambda, "lambda", false); },
                        [](const method::TaskArithmetic& t) { check_scaling(t.scaling); },
                        [](const method::Ties& t) {
                          check_unit_interval(t.density, "density", true);
                          check_scaling(t.scaling);
                        },
                        [](const method::Della& d) {
                          check_unit_interval(d.density, "density", true);
                          check_scaling(d.scaling);
                          const double max_eps = std::min(d.density, 1.0 - d.density);
                          if (!(d.epsilon >= 0.0 && d.epsilon <= max_eps + 1e-15))
                            throw Error(ErrorCode::InvalidRecipe,
                                        "epsilon must lie in [0, min(density, 1 - density)], got " +
                                            std::to_string(d.epsilon));
                        }},
             m);
}

std::vector<double> merge_linear(std::span<const double> w_a, std::span<const double> w_b, double lambda) {
  require_same_length(w_a.size(), w_b.size());
  std::vector<double> out(w_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * w_a[i] + (1.0 - lambda) * w_b[i];
  return out;
}

std::vector<double> merge_task_arithmetic(std::span<const double> w_a, std::span<const double> w_b,
                                          std::span<const double> w_base, double scaling) {
  require_same_length(w_a.size(), w_b.size());
  require_same_length(w_a.size(), w_base.size());
  std::vector<double> out(w_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double delta = ((w_a[i] - w_base[i]) + (w_b[i] - w_base[i])) / 2.0;
    out[i] = w_base[i] + scaling * delta;
  }
  return out;
}

std::vector<double> task_vector(std::span<const double> w, std::span<const double> w_base) {
  require_same_length(w.size(), w_base.size());
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[i] - w_base[i];
  return out;
}

std::size_t trim_count(double density, std::size_t n) {
  const double x = density * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(x));
  // 0.2 * 10 evaluates to 2.0000000000000004; do not round that up to 3.
  if (k > 0 && static_cast<double>(k - 1) >= x * (1.0 - 1e-12)) --k;
  return std::min(k, n);
}

std::vector<double> trim_task_vector(std::span<const double> tau, double density) {
  check_unit_interval(density, "density", true);
  const std::size_t k = trim_count(density, tau.size());
  if (k == tau.size()) return {tau.begin(), tau.end()};
  std::vector<std::size_t> idx(tau.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), ByMagnitudeDesc{tau});
  std::vector<double> out(tau.size(), 0.0);
  for (std::size_t r = 0; r < k; ++r) out[idx[r]] = tau[idx[r]];
  return out;
}

std::vector<double> merge_ties(std::span<const std::vector<double>> taus, std::span<const double> w_base,
                               double scaling) {
  std::vector<double> out(w_base.begin(), w_base.end());
  for (const auto& t : taus) require_same_length(t.size(), w_base.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    double total = 0.0;
    for (const auto& t : taus) total += t[j];
    if (total == 0.0) continue;
    const bool positive = total > 0.0;
    double agree = 0.0;
    std::size_t count = 0;
    for (const auto& t : taus) {
      if ((positive && t[j] > 0.0) || (!positive && t[j] < 0.0)) {
        agree += t[j];
        ++count;
      }
    }
    if (count) out[j] = w_base[j] + scaling * (agree / static_cast<double>(count));
  }
  return out;
}

std::vector<double> della_drop(std::span<const double> tau, double density, double epsilon,
                               const DropStream& stream) {
  const std::size_t n = tau.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;

  // rank[i] = position of entry i when sorted by ascending magnitude.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const double a = std::abs(tau[i]), b = std::abs(tau[j]);
    return a < b || (a == b && i < j);
  });

  const CoordinateRng rng(stream.seed, stream.tensor_name, stream.task);
  const double span = n > 1 ? 2.0 * epsilon / static_cast<double>(n - 1) : 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = order[r];
    const double p = n > 1 ? (density - epsilon) + span * static_cast<double>(r) : density;
    if (p <= 0.0) continue;
    if (p >= 1.0 || rng.uniform(i) < p) out[i] = tau[i] / std::min(p, 1.0);
  }
  return out;
}

std::vector<double> merge_della(std::span<const std::vector<double>> taus, std::span<const double> w_base,
                                const method::Della& params, std::uint64_t seed, std::string_view tensor_name) {
  std::vector<std::vector<double>> dropped;
  dropped.reserve(taus.size());
  for (std::size_t t = 0; t < taus.size(); ++t) {
    require_same_length(taus[t].size(), w_base.size());
    dropped.push_back(della_drop(taus[t], params.density, params.epsilon,
                                 {seed, tensor_name, static_cast<std::uint32_t>(t)}));
  }
  return merge_ties(dropped, w_base, params.scaling);
}

}  // namespace geomerge
