#include "geomerge/recipe.hpp"

#include <fnmatch.h>

#include <cctype>
#include <fstream>
#include <set>
#include <thread>

#include "geomerge/error.hpp"

namespace geomerge {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

[[noreturn]] void bad(const std::string& why) { throw Error(ErrorCode::InvalidRecipe, why); }

template <class T>
std::optional<T> opt_field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    bad(std::string("recipe field '") + key + "' has the wrong type");
  }
}

}  // namespace

DType DTypePolicy::resolve(DType a, DType b) const {
  switch (kind) {
    case Kind::PreserveA: return a;
    case Kind::PreserveB: return b;
    case Kind::Force: return forced;
  }
  return a;
}

std::string DTypePolicy::to_string() const {
  switch (kind) {
    case Kind::PreserveA: return "preserve_a";
    case Kind::PreserveB: return "preserve_b";
    case Kind::Force: return std::string(geomerge::to_string(forced));
  }
  return "?";
}

DTypePolicy DTypePolicy::parse(std::string_view s) {
  const auto l = lower(s);
  if (l == "preserve_a" || l == "preservea") return {Kind::PreserveA, DType::F32};
  if (l == "preserve_b" || l == "preserveb") return {Kind::PreserveB, DType::F32};
  std::string upper(s);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (auto d = parse_dtype(upper)) return {Kind::Force, *d};
  bad("unknown dtype policy '" + std::string(s) + "' (expected preserve_a, preserve_b, F64, F32, F16 or BF16)");
}

void MergeRecipe::validate() const {
  geomerge::validate(method);
  if (input_a.empty() || input_b.empty()) bad("both input checkpoints (--a, --b) are required");
  if (output.empty()) bad("an output path (--out) is required");
  if (requires_base(method) && !base)
    throw Error(ErrorCode::MissingBase,
                std::string(method_name(method)) + " needs a base checkpoint; pass --base");
  if (!requires_base(method) && base)
    bad(std::string(method_name(method)) + " does not use a base checkpoint; drop --base");
  for (const auto& f : tensor_filters) validate_glob(f);
  geodesic_params(0.0).validate();
}

GeodesicParams MergeRecipe::geodesic_params(double lambda) const {
  return GeodesicParams{lambda, collinear_threshold, antipodal_threshold};
}

unsigned MergeRecipe::effective_threads() const {
  if (threads > 0) return threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? hc : 1;
}

RecipeLayer RecipeLayer::from_json(const nlohmann::json& j) {
  if (!j.is_object()) bad("recipe must be a JSON object");
  static const std::set<std::string> known = {"method", "lambda", "density", "epsilon", "scaling",
                                              "a", "b", "base", "out", "report", "filters",
                                              "dtype_policy", "seed", "threads", "collinear_threshold",
                                              "antipodal_threshold"};
  for (auto& [k, v] : j.items())
    if (!known.count(k)) bad("unknown recipe field '" + k + "'");
  RecipeLayer l;
  l.method = opt_field<std::string>(j, "method");
  l.lambda = opt_field<double>(j, "lambda");
  l.density = opt_field<double>(j, "density");
  l.epsilon = opt_field<double>(j, "epsilon");
  l.scaling = opt_field<double>(j, "scaling");
  l.a = opt_field<std::string>(j, "a");
  l.b = opt_field<std::string>(j, "b");
  l.base = opt_field<std::string>(j, "base");
  l.out = opt_field<std::string>(j, "out");
  l.report = opt_field<std::string>(j, "report");
  l.filters = opt_field<std::vector<std::string>>(j, "filters");
  l.dtype_policy = opt_field<std::string>(j, "dtype_policy");
  l.seed = opt_field<std::uint64_t>(j, "seed");
  if (auto it = j.find("threads"); it != j.end() && !it->is_null()) {
    if (it->is_number_unsigned()) l.threads = std::to_string(it->get<std::uint64_t>());
    else if (it->is_string()) l.threads = it->get<std::string>();
    else bad("recipe field 'threads' must be a positive integer or \"auto\"");
  }
  l.collinear_threshold = opt_field<double>(j, "collinear_threshold");
  l.antipodal_threshold = opt_field<double>(j, "antipodal_threshold");
  return l;
}

RecipeLayer RecipeLayer::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open recipe");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    bad(path.string() + ": invalid recipe JSON: " + e.what());
  }
  return from_json(j);
}

void RecipeLayer::overlay(const RecipeLayer& u) {
  auto take = [](auto& dst, const auto& src) {
    if (src) dst = src;
  };
  take(method, u.method);
  take(lambda, u.lambda);
  take(density, u.density);
  take(epsilon, u.epsilon);
  take(scaling, u.scaling);
  take(a, u.a);
  take(b, u.b);
  take(base, u.base);
  take(out, u.out);
  take(report, u.report);
  take(filters, u.filters);
  take(dtype_policy, u.dtype_policy);
  take(seed, u.seed);
  take(threads, u.threads);
  take(collinear_threshold, u.collinear_threshold);
  take(antipodal_threshold, u.antipodal_threshold);
}

MergeRecipe RecipeLayer::resolve() const {
  MergeRecipe r;
  const std::string m = lower(method.value_or("geodesic"));
  // Parameters that do not apply to the chosen method are ignored.
  if (m == "geodesic" || m == "slerp") {
    r.method = method::Geodesic{lambda.value_or(0.6)};
  } else if (m == "linear" || m == "soup" || m == "model_soup") {
    r.method = method::Linear{lambda.value_or(0.6)};
  } else if (m == "task_arithmetic" || m == "task-arithmetic") {
    r.method = method::TaskArithmetic{scaling.value_or(1.0)};
  } else if (m == "ties") {
    r.method = method::Ties{density.value_or(0.2), scaling.value_or(1.0)};
  } else if (m == "della") {
    r.method = method::Della{density.value_or(0.2), scaling.value_or(1.0), epsilon.value_or(0.1)};
  } else {
    bad("unknown method '" + *method + "' (expected geodesic, linear, task_arithmetic, ties or della)");
  }
  if (a) r.input_a = *a;
  if (b) r.input_b = *b;
  if (base) r.base = std::filesystem::path(*base);
  if (out) r.output = *out;
  if (report) r.report = std::filesystem::path(*report);
  if (filters) r.tensor_filters = *filters;
  if (dtype_policy) r.dtype_policy = DTypePolicy::parse(*dtype_policy);
  if (seed) r.seed = *seed;
  if (threads) {
    if (lower(*threads) == "auto") {
      r.threads = 0;
    } else {
      std::size_t used = 0;
      long v = 0;
      try {
        v = std::stol(*threads, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != threads->size() || v <= 0) bad("threads must be a positive integer or \"auto\"");
      r.threads = static_cast<unsigned>(v);
    }
  }
  if (collinear_threshold) r.collinear_threshold = *collinear_threshold;
  if (antipodal_threshold) r.antipodal_threshold = *antipodal_threshold;
  return r;
}

nlohmann::json method_params_json(const MergeMethod& m) {
  nlohmann::json j;
  j["method"] = std::string(method_name(m));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, method::Geodesic> || std::is_same_v<T, method::Linear>) {
          j["lambda"] = p.lambda;
        } else if constexpr (std::is_same_v<T, method::TaskArithmetic>) {
          j["scaling"] = p.scaling;
        } else if constexpr (std::is_same_v<T, method::Ties>) {
          j["density"] = p.density;
          j["scaling"] = p.scaling;
        } else {
          j["density"] = p.density;
          j["epsilon"] = p.epsilon;
          j["scaling"] = p.scaling;
        }
      },
      m);
  return j;
}

nlohmann::json to_json(const MergeRecipe& r) {
  nlohmann::json j = method_params_json(r.method);
  j["a"] = r.input_a.string();
  j["b"] = r.input_b.string();
  j["base"] = r.base ? nlohmann::json(r.base->string()) : nlohmann::json(nullptr);
  j["out"] = r.output.string();
  j["filters"] = r.tensor_filters;
  j["dtype_policy"] = r.dtype_policy.to_string();
  j["seed"] = r.seed;
  j["threads"] = r.threads == 0 ? nlohmann::json("auto") : nlohmann::json(r.threads);
  j["collinear_threshold"] = r.collinear_threshold;
  j["antipodal_threshold"] = r.antipodal_threshold;
  j["report"] = r.report ? nlohmann::json(r.report->string()) : nlohmann::json(nullptr);
  return j;
}

void validate_glob(std::string_view pattern) {
  if (pattern.empty()) bad("empty tensor filter");
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '\\') {
      if (++i == pattern.size()) bad("filter '" + std::string(pattern) + "' ends with a lone backslash");
      continue;
    }
    if (pattern[i] != '[') continue;
    std::size_t j = i + 1;
    if (j < pattern.size() && (pattern[j] == '!' || pattern[j] == '^')) ++j;
    if (j < pattern.size() && pattern[j] == ']') ++j;
    while (j < pattern.size() && pattern[j] != ']') ++j;
    if (j >= pattern.size()) bad("filter '" + std::string(pattern) + "' has an unterminated '['");
    i = j;
  }
}

bool glob_match(std::string_view pattern, std::string_view name) {
  const std::string p(pattern), n(name);
  return ::fnmatch(p.c_str(), n.c_str(), 0) == 0;
}

}  // namespace geomerge
