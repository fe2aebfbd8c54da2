#include "geomerge/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "geomerge/engine.hpp"
#include "geomerge/error.hpp"
#include "geomerge/version.hpp"

namespace geomerge::cli {

namespace {

struct SharedFlags {
  std::string recipe;
  RecipeLayer layer;
  std::string lambdas;
  bool json = false;
  int verbosity = 0;
};

// Registers the recipe-mirroring flags; each writes into an optional so that
// only flags actually given override the recipe file.
void add_recipe_flags(CLI::App& cmd, SharedFlags& f) {
  cmd.add_option("--recipe", f.recipe, "JSON recipe file (flags override its fields)");
  cmd.add_option("--a", f.layer.a, "chip / domain checkpoint (reached at lambda = 1)");
  cmd.add_option("--b", f.layer.b, "instruction checkpoint (reached at lambda = 0)");
  cmd.add_option("--base", f.layer.base, "common base checkpoint (task_arithmetic, ties, della)");
  cmd.add_option("--out", f.layer.out, "output checkpoint path");
  cmd.add_option("--method", f.layer.method, "geodesic | linear | task_arithmetic | ties | della");
  cmd.add_option("--lambda", f.layer.lambda, "interpolation weight on --a (default 0.6)");
  cmd.add_option("--density", f.layer.density, "fraction of task-vector entries kept (ties, della)");
  cmd.add_option("--epsilon", f.layer.epsilon, "keep-probability spread (della)");
  cmd.add_option("--scaling", f.layer.scaling, "task-vector scaling (task_arithmetic, ties, della)");
  cmd.add_option("--seed", f.layer.seed, "seed for della's drop masks");
  cmd.add_option("--threads", f.layer.threads, "worker threads or 'auto'");
  cmd.add_option("--filter", f.layer.filters, "glob selecting tensors to merge (repeatable)");
  cmd.add_option("--dtype-policy", f.layer.dtype_policy, "preserve_a | preserve_b | F64 | F32 | F16 | BF16");
  cmd.add_option("--report", f.layer.report, "write a JSON merge report here");
  cmd.add_flag("--json", f.json, "machine-readable output");
  cmd.add_flag("-v", f.verbosity, "verbose output (repeatable)");
}

MergeRecipe resolve_recipe(const SharedFlags& f) {
  RecipeLayer layer;
  if (!f.recipe.empty()) layer = RecipeLayer::from_file(f.recipe);
  layer.overlay(f.layer);
  return layer.resolve();
}

std::string fmt_double(double v, int precision = 6) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

struct ThetaSummary {
  double min = NAN, median = NAN, max = NAN;
};

ThetaSummary theta_summary(const MergeReport& r) {
  std::vector<double> th;
  for (const auto& t : r.tensors)
    if (t.action == TensorAction::Merged && std::isfinite(t.stats.theta_radians)) th.push_back(t.stats.theta_radians);
  ThetaSummary s;
  if (th.empty()) return s;
  std::sort(th.begin(), th.end());
  s.min = th.front();
  s.max = th.back();
  const std::size_t m = th.size() / 2;
  s.median = th.size() % 2 ? th[m] : 0.5 * (th[m - 1] + th[m]);
  return s;
}

void print_merge_summary(const MergeReport& r, const SharedFlags& f, std::ostream& out, std::ostream& err) {
  for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  if (f.json) {
    out << r.to_json().dump(2) << '\n';
    return;
  }
  if (f.verbosity > 0) {
    for (const auto& t : r.tensors) {
      out << "  " << std::left << std::setw(40) << t.stats.tensor_name << ' ' << std::setw(8) << to_string(t.action)
          << " theta=" << fmt_double(t.stats.theta_radians) << " |a|=" << fmt_double(t.stats.norm_a)
          << " |b|=" << fmt_double(t.stats.norm_b) << " |m|=" << fmt_double(t.stats.merged_norm)
          << " fallback=" << to_string(t.stats.fallback) << '\n';
    }
  }
  const auto th = theta_summary(r);
  out << "method      " << method_params_json(r.recipe.method).dump() << '\n'
      << "output      " << r.recipe.output.string() << '\n'
      << "tensors     " << r.tensors.size() << " total, " << r.merged << " merged, " << r.copied << " copied, "
      << r.skipped << " skipped\n"
      << "theta (rad) min " << fmt_double(th.min) << "  median " << fmt_double(th.median) << "  max "
      << fmt_double(th.max) << '\n'
      << "wall time   " << fmt_double(r.wall_time_s, 4) << " s (" << r.threads << " threads)\n";
}

int cmd_merge(const SharedFlags& f, std::ostream& out, std::ostream& err) {
  const MergeRecipe recipe = resolve_recipe(f);
  const MergeReport report = run_merge(recipe);
  print_merge_summary(report, f, out, err);
  return 0;
}

int cmd_sweep(const SharedFlags& f, std::ostream& out, std::ostream& err) {
  const MergeRecipe recipe = resolve_recipe(f);
  if (!is_lambda_parameterized(recipe.method))
    throw Error(ErrorCode::InvalidRecipe,
                "sweep requires --method geodesic or linear, got " + std::string(method_name(recipe.method)));
  if (f.lambdas.empty()) throw Error(ErrorCode::InvalidRecipe, "sweep requires --lambdas");
  const auto lambdas = parse_lambdas(f.lambdas);
  const SweepResult result = sweep(recipe, lambdas);
  for (const auto& r : result.reports)
    for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  if (f.json) {
    out << result.to_json().dump(2) << '\n';
    return 0;
  }
  out << std::left << std::setw(10) << "lambda" << std::setw(10) << "merged" << std::setw(14) << "theta_median"
      << std::setw(12) << "wall_s" << "output\n";
  for (std::size_t i = 0; i < result.lambdas.size(); ++i) {
    const auto& r = result.reports[i];
    out << std::left << std::setw(10) << format_lambda(result.lambdas[i]) << std::setw(10) << r.merged
        << std::setw(14) << fmt_double(theta_summary(r).median) << std::setw(12) << fmt_double(r.wall_time_s, 4)
        << result.outputs[i].string() << '\n';
  }
  return 0;
}

int cmd_inspect(const std::string& path, bool json, std::ostream& out) {
  const Checkpoint ck = Checkpoint::open(path);
  std::uint64_t params = 0, bytes = 0;
  for (const auto& t : ck.tensors()) {
    params += t.numel();
    bytes += t.nbytes();
  }
  if (json) {
    nlohmann::ordered_json j;
    j["path"] = path;
    j["header_bytes"] = ck.header_size();
    j["tensors"] = nlohmann::ordered_json::array();
    for (const auto& t : ck.tensors()) {
      j["tensors"].push_back({{"name", t.name},
                              {"dtype", std::string(to_string(t.dtype))},
                              {"shape", t.shape},
                              {"data_offsets", {t.begin, t.end}},
                              {"nbytes", t.nbytes()}});
    }
    j["metadata"] = ck.metadata();
    j["totals"] = {{"tensors", ck.tensors().size()}, {"parameters", params}, {"bytes", bytes}};
    out << j.dump(2) << '\n';
    return 0;
  }
  std::size_t w = 4;
  for (const auto& t : ck.tensors()) w = std::max(w, t.name.size());
  out << std::left << std::setw(static_cast<int>(w) + 2) << "name" << std::setw(6) << "dtype" << std::setw(20)
      << "shape" << "bytes\n";
  for (const auto& t : ck.tensors()) {
    out << std::left << std::setw(static_cast<int>(w) + 2) << t.name << std::setw(6) << to_string(t.dtype)
        << std::setw(20) << shape_to_string(t.shape) << t.nbytes() << '\n';
  }
  out << "total: " << ck.tensors().size() << " tensors, " << params << " parameters, " << bytes << " bytes\n";
  for (const auto& [k, v] : ck.metadata()) out << "metadata " << k << " = " << v << '\n';
  return 0;
}

int cmd_diff(const std::string& pa, const std::string& pb, bool json, std::ostream& out) {
  const Checkpoint a = Checkpoint::open(pa);
  const Checkpoint b = Checkpoint::open(pb);
  nlohmann::json common = nlohmann::json::array();
  nlohmann::json mismatched = nlohmann::json::array();
  nlohmann::json only_a = nlohmann::json::array();
  nlohmann::json only_b = nlohmann::json::array();

  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  for (const auto& ia : a.tensors()) {
    const TensorInfo* ib = b.find(ia.name);
    if (!ib) {
      only_a.push_back(ia.name);
      continue;
    }
    if (ib->shape != ia.shape) {
      mismatched.push_back({{"name", ia.name}, {"shape_a", ia.shape}, {"shape_b", ib->shape}});
      continue;
    }
    const auto va = a.read_tensor(ia).values();
    const auto vb = b.read_tensor(*ib).values();
    const double na = frobenius_norm(va), nb = frobenius_norm(vb);
    double theta = NAN, cosine = NAN;
    if (na >= kZeroNorm && nb >= kZeroNorm) {
      theta = angle_between(project_to_sphere(va), project_to_sphere(vb));
      cosine = std::clamp(dot(va, vb) / (na * nb), -1.0, 1.0);
    }
    common.push_back({{"name", ia.name},
                      {"norm_a", na},
                      {"norm_b", nb},
                      {"norm_ratio", num(na > 0 ? nb / na : NAN)},
                      {"theta_radians", num(theta)},
                      {"cosine", num(cosine)}});
  }
  for (const auto& ib : b.tensors())
    if (!a.find(ib.name)) only_b.push_back(ib.name);

  if (json) {
    nlohmann::ordered_json j;
    j["a"] = pa;
    j["b"] = pb;
    j["common"] = common;
    j["shape_mismatches"] = mismatched;
    j["only_in_a"] = only_a;
    j["only_in_b"] = only_b;
    out << j.dump(2) << '\n';
    return 0;
  }
  std::size_t w = 4;
  for (const auto& c : common) w = std::max(w, c["name"].get<std::string>().size());
  auto cell = [&](const nlohmann::json& v) { return v.is_null() ? std::string("-") : fmt_double(v.get<double>(), 8); };
  out << std::left << std::setw(static_cast<int>(w) + 2) << "name" << std::setw(14) << "norm_a" << std::setw(14)
      << "norm_b" << std::setw(14) << "ratio" << std::setw(14) << "theta" << "cosine\n";
  for (const auto& c : common) {
    out << std::left << std::setw(static_cast<int>(w) + 2) << c["name"].get<std::string>() << std::setw(14)
        << cell(c["norm_a"]) << std::setw(14) << cell(c["norm_b"]) << std::setw(14) << cell(c["norm_ratio"])
        << std::setw(14) << cell(c["theta_radians"]) << cell(c["cosine"]) << '\n';
  }
  for (const auto& m : mismatched)
    out << "shape mismatch: " << m["name"].get<std::string>() << ' ' << m["shape_a"].dump() << " vs "
        << m["shape_b"].dump() << '\n';
  for (const auto& n : only_a) out << "only in a: " << n.get<std::string>() << '\n';
  for (const auto& n : only_b) out << "only in b: " << n.get<std::string>() << '\n';
  return 0;
}

}  // namespace

std::vector<double> parse_lambdas(std::string_view text) {
  auto number = [&](std::string_view s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(std::string(s), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size())
      throw Error(ErrorCode::InvalidRecipe, "invalid lambda '" + std::string(s) + "' in '" + std::string(text) + "'");
    return v;
  };
  std::vector<double> out;
  if (text.find(':') != std::string_view::npos) {
    const auto c1 = text.find(':');
    const auto c2 = text.find(':', c1 + 1);
    if (c2 == std::string_view::npos || text.find(':', c2 + 1) != std::string_view::npos)
      throw Error(ErrorCode::InvalidRecipe, "lambda range must be start:end:step, got '" + std::string(text) + "'");
    const double start = number(text.substr(0, c1));
    const double end = number(text.substr(c1 + 1, c2 - c1 - 1));
    const double step = number(text.substr(c2 + 1));
    if (!(step > 0) || end < start)
      throw Error(ErrorCode::InvalidRecipe, "lambda range needs step > 0 and end >= start");
    const double steps = (end - start) / step;
    const double whole = std::round(steps);
    const bool inclusive = std::abs(steps - whole) <= 1e-9;
    const auto count = static_cast<std::size_t>(inclusive ? whole : std::floor(steps));
    for (std::size_t k = 0; k <= count; ++k) {
      double v = start + static_cast<double>(k) * step;
      v = std::round(v * 1e12) / 1e12;  // 3 * 0.1 -> 0.3
      out.push_back(v);
    }
    if (inclusive) out.back() = end;
  } else {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto comma = text.find(',', pos);
      const auto piece = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
      out.push_back(number(piece));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
  }
  return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"geomerge: merge neural-network checkpoints by geodesic interpolation and baseline methods"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SharedFlags merge_f, sweep_f;
  auto* merge = app.add_subcommand("merge", "merge two checkpoints into one");
  add_recipe_flags(*merge, merge_f);

  auto* sweep_cmd = app.add_subcommand("sweep", "merge at several lambdas (geodesic or linear)");
  add_recipe_flags(*sweep_cmd, sweep_f);
  sweep_cmd->add_option("--lambdas", sweep_f.lambdas, "start:end:step (inclusive) or comma list")->required();

  std::string inspect_path;
  bool inspect_json = false;
  auto* inspect = app.add_subcommand("inspect", "list tensors and metadata of a checkpoint");
  inspect->add_option("path", inspect_path, "checkpoint file")->required();
  inspect->add_flag("--json", inspect_json, "machine-readable output");

  std::string diff_a, diff_b;
  bool diff_json = false;
  auto* diff = app.add_subcommand("diff", "per-tensor norms and angles between two checkpoints");
  diff->add_option("a", diff_a, "first checkpoint")->required();
  diff->add_option("b", diff_b, "second checkpoint")->required();
  diff->add_flag("--json", diff_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*merge) return cmd_merge(merge_f, out, err);
    if (*sweep_cmd) return cmd_sweep(sweep_f, out, err);
    if (*inspect) return cmd_inspect(inspect_path, inspect_json, out);
    if (*diff) return cmd_diff(diff_a, diff_b, diff_json, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: IoFailure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace geomerge::cli
