#include "geomerge/engine.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "geomerge/error.hpp"
#include "geomerge/methods.hpp"
#include "geomerge/version.hpp"

namespace geomerge {

namespace {

struct Inputs {
  Checkpoint a;
  Checkpoint b;
  std::optional<Checkpoint> base;
};

Inputs open_inputs(const MergeRecipe& r) {
  Inputs in{Checkpoint::open(r.input_a), Checkpoint::open(r.input_b), std::nullopt};
  if (r.base) in.base = Checkpoint::open(*r.base);
  return in;
}

Metadata output_metadata(const MergeRecipe& r, const MergeMethod& m) {
  return {{"geomerge.method", std::string(method_name(m))},
          {"geomerge.params", method_params_json(m).dump()},
          {"geomerge.seed", std::to_string(r.seed)},
          {"geomerge.dtype_policy", r.dtype_policy.to_string()},
          {"geomerge.version", kVersion}};
}

double diagnostic_angle(std::span<const double> a, std::span<const double> b, double na, double nb) {
  if (na < kZeroNorm || nb < kZeroNorm) return std::numeric_limits<double>::quiet_NaN();
  const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return std::acos(c);
}

class MergeJob {
 public:
  MergeJob(const MergeRecipe& recipe, const MergeMethod& method, const Inputs& inputs, const PairingPlan& plan)
      : recipe_(recipe), method_(method), in_(inputs), plan_(plan) {
    layout_.reserve(plan.entries.size());
    for (const auto& e : plan.entries) {
      const TensorInfo& ia = *in_.a.find(e.name);
      DType dt = ia.dtype;
      if (e.action == PlanAction::Merge) dt = recipe.dtype_policy.resolve(ia.dtype, in_.b.find(e.name)->dtype);
      layout_.push_back({e.name, dt, ia.shape});
    }
  }

  MergeReport run(const std::filesystem::path& output) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = layout_.size();
    const unsigned threads = std::max(1u, recipe_.effective_threads());

    MergeReport report;
    report.recipe = recipe_;
    report.recipe.method = method_;
    report.recipe.output = output;
    report.threads = threads;
    report.tensors.resize(n);
    for (const auto& l : layout_)
      report.max_tensor_bytes = std::max<std::uint64_t>(report.max_tensor_bytes, stored_bytes(l));

    auto partial = output;
    partial += ".partial";
    try {
      CheckpointWriter writer(partial, layout_, output_metadata(recipe_, method_));
      if (threads == 1 || n < 2)
        run_serial(writer, report);
      else
        run_parallel(writer, report, threads);
      writer.finish();
      std::error_code ec;
      std::filesystem::rename(partial, output, ec);
      if (ec) throw Error(ErrorCode::IoFailure, output.string() + ": " + ec.message());
    } catch (...) {
      std::error_code ec;
      std::filesystem::remove(partial, ec);
      throw;
    }

    for (const auto& t : report.tensors) {
      switch (t.action) {
        case TensorAction::Merged: ++report.merged; break;
        case TensorAction::Copied: ++report.copied; break;
        case TensorAction::Skipped: ++report.skipped; break;
      }
      if (t.stats.fallback == Fallback::CopiedThrough && t.note == "zero-norm")
        report.warnings.push_back("tensor '" + t.stats.tensor_name +
                                  "' has zero norm; copied through from input_a");
    }
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
  }

 private:
  static std::uint64_t stored_bytes(const TensorLayout& l) {
    return element_count(l.shape) * byte_width(l.dtype);
  }

  void run_serial(CheckpointWriter& writer, MergeReport& report) {
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      auto [record, outcome] = compute(i);
      report.peak_tensor_bytes = std::max<std::uint64_t>(report.peak_tensor_bytes, stored_bytes(layout_[i]));
      writer.write(record);
      report.tensors[i] = std::move(outcome);
    }
  }

  // Workers claim tensors in header order but never run more than `threads`
  // ahead of the writer, which bounds the tensors held in memory.
  void run_parallel(CheckpointWriter& writer, MergeReport& report, unsigned threads) {
    const std::size_t n = layout_.size();
    struct Slot {
      std::optional<TensorRecord> record;
      bool done = false;
    };
    std::vector<Slot> slots(n);
    std::mutex mu;
    std::condition_variable cv;
    std::size_t next = 0, written = 0;
    std::uint64_t in_flight = 0;
    bool stop = false;
    std::exception_ptr failure;

    auto worker = [&] {
      for (;;) {
        std::size_t i;
        {
          std::unique_lock lk(mu);
          cv.wait(lk, [&] { return stop || next >= n || next < written + threads; });
          if (stop || next >= n) return;
          i = next++;
          in_flight += stored_bytes(layout_[i]);
          report.peak_tensor_bytes = std::max(report.peak_tensor_bytes, in_flight);
        }
        try {
          auto [record, outcome] = compute(i);
          std::lock_guard lk(mu);
          slots[i].record = std::move(record);
          slots[i].done = true;
          report.tensors[i] = std::move(outcome);
        } catch (...) {
          std::lock_guard lk(mu);
          if (!failure) failure = std::current_exception();
          stop = true;
        }
        cv.notify_all();
      }
    };

    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);

    try {
      for (std::size_t i = 0; i < n; ++i) {
        TensorRecord record;
        {
          std::unique_lock lk(mu);
          cv.wait(lk, [&] { return stop || slots[i].done; });
          if (!slots[i].done) break;
          record = std::move(*slots[i].record);
          slots[i].record.reset();
        }
        writer.write(record);
        {
          std::lock_guard lk(mu);
          in_flight -= stored_bytes(layout_[i]);
          ++written;
        }
        cv.notify_all();
      }
    } catch (...) {
      {
        std::lock_guard lk(mu);
        stop = true;
        if (!failure) failure = std::current_exception();
      }
      cv.notify_all();
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }

  std::pair<TensorRecord, TensorOutcome> compute(std::size_t i) const {
    const PlanEntry& entry = plan_.entries[i];
    const TensorLayout& slot = layout_[i];
    TensorOutcome outcome;
    outcome.stats.tensor_name = entry.name;

    TensorRecord a = in_.a.read_tensor(entry.name);
    if (entry.action != PlanAction::Merge) {
      outcome.action = entry.action == PlanAction::Copy ? TensorAction::Copied : TensorAction::Skipped;
      outcome.note = entry.action == PlanAction::Copy ? "unmatched by filters" : "empty";
      if (entry.action == PlanAction::CopyEmpty) outcome.stats.fallback = Fallback::CopiedThrough;
      return {std::move(a), std::move(outcome)};
    }

    const auto va = a.values();
    const auto vb = in_.b.read_tensor(entry.name).values();
    std::vector<double> vbase;
    if (in_.base) vbase = in_.base->read_tensor(entry.name).values();

    auto& st = outcome.stats;
    st.norm_a = frobenius_norm(va);
    st.norm_b = frobenius_norm(vb);
    st.theta_radians = std::numeric_limits<double>::quiet_NaN();

    std::vector<double> merged;
    try {
      merged = std::visit([&](const auto& m) { return apply(m, entry.name, va, vb, vbase, outcome); }, method_);
    } catch (const Error& e) {
      throw Error(e.code(), "tensor '" + entry.name + "': " + e.detail());
    }
    if (outcome.action == TensorAction::Skipped) {
      // Zero-norm copy-through keeps input_a's values, re-encoded only if the
      // dtype policy asks for a different storage type.
      return {convert_dtype(a, slot.dtype), std::move(outcome)};
    }
    if (std::isnan(st.theta_radians)) st.theta_radians = diagnostic_angle(va, vb, st.norm_a, st.norm_b);
    st.merged_norm = frobenius_norm(merged);
    return {TensorRecord::from_values(entry.name, slot.dtype, slot.shape, merged), std::move(outcome)};
  }

  std::vector<double> apply(const method::Geodesic& g, const std::string& name, const std::vector<double>& va,
                            const std::vector<double>& vb, const std::vector<double>&,
                            TensorOutcome& outcome) const {
    if (outcome.stats.norm_a < kZeroNorm || outcome.stats.norm_b < kZeroNorm) {
      outcome.action = TensorAction::Skipped;
      outcome.note = "zero-norm";
      outcome.stats.fallback = Fallback::CopiedThrough;
      return {};
    }
    auto r = geodesic_merge(va, vb, recipe_.geodesic_params(g.lambda), name);
    outcome.stats.theta_radians = r.stats.theta_radians;
    outcome.stats.fallback = r.stats.fallback;
    return std::move(r.values);
  }

  std::vector<double> apply(const method::Linear& l, const std::string&, const std::vector<double>& va,
                            const std::vector<double>& vb, const std::vector<double>&, TensorOutcome&) const {
    return merge_linear(va, vb, l.lambda);
  }

  std::vector<double> apply(const method::TaskArithmetic& t, const std::string&, const std::vector<double>& va,
                            const std::vector<double>& vb, const std::vector<double>& base,
                            TensorOutcome&) const {
    return merge_task_arithmetic(va, vb, base, t.scaling);
  }

  std::vector<double> apply(const method::Ties& t, const std::string&, const std::vector<double>& va,
                            const std::vector<double>& vb, const std::vector<double>& base,
                            TensorOutcome&) const {
    const std::vector<std::vector<double>> taus = {trim_task_vector(task_vector(va, base), t.density),
                                                   trim_task_vector(task_vector(vb, base), t.density)};
    return merge_ties(taus, base, t.scaling);
  }

  std::vector<double> apply(const method::Della& d, const std::string& name, const std::vector<double>& va,
                            const std::vector<double>& vb, const std::vector<double>& base,
                            TensorOutcome&) const {
    const std::vector<std::vector<double>> taus = {task_vector(va, base), task_vector(vb, base)};
    return merge_della(taus, base, d, recipe_.seed, name);
  }

  const MergeRecipe& recipe_;
  const MergeMethod& method_;
  const Inputs& in_;
  const PairingPlan& plan_;
  std::vector<TensorLayout> layout_;
};

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::size_t PairingPlan::count(PlanAction a) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const PlanEntry& e) { return e.action == a; }));
}

PairingPlan validate_pairing(const Checkpoint& a, const Checkpoint& b, const Checkpoint* base,
                             std::span<const std::string> filters) {
  for (const auto& f : filters) validate_glob(f);
  PairingPlan plan;
  plan.entries.reserve(a.tensors().size());
  auto check = [](const TensorInfo& ia, const Checkpoint& other, const char* role) {
    const TensorInfo* io = other.find(ia.name);
    if (!io)
      throw Error(ErrorCode::MissingTensor,
                  "tensor '" + ia.name + "' is in input_a but missing from " + role + " (" + other.path().string() + ")");
    if (io->shape != ia.shape)
      throw Error(ErrorCode::ShapeMismatch, "tensor '" + ia.name + "' has shape " + shape_to_string(ia.shape) +
                                                " in input_a but " + shape_to_string(io->shape) + " in " + role);
  };
  for (const auto& ia : a.tensors()) {
    const bool selected = filters.empty() || std::any_of(filters.begin(), filters.end(), [&](const std::string& f) {
                            return glob_match(f, ia.name);
                          });
    if (!selected) {
      plan.entries.push_back({ia.name, PlanAction::Copy});
      continue;
    }
    check(ia, b, "input_b");
    if (base) check(ia, *base, "base");
    plan.entries.push_back({ia.name, ia.numel() == 0 ? PlanAction::CopyEmpty : PlanAction::Merge});
  }
  return plan;
}

std::string_view to_string(TensorAction a) {
  switch (a) {
    case TensorAction::Merged: return "merged";
    case TensorAction::Copied: return "copied";
    case TensorAction::Skipped: return "skipped";
  }
  return "?";
}

nlohmann::json MergeReport::to_json() const {
  nlohmann::json tensors_j = nlohmann::json::array();
  for (const auto& t : tensors) {
    tensors_j.push_back({{"tensor_name", t.stats.tensor_name},
                         {"action", std::string(to_string(t.action))},
                         {"note", t.note},
                         {"norm_a", t.stats.norm_a},
                         {"norm_b", t.stats.norm_b},
                         {"theta_radians", finite_or_null(t.stats.theta_radians)},
                         {"fallback", std::string(to_string(t.stats.fallback))},
                         {"merged_norm", t.stats.merged_norm}});
  }
  nlohmann::json summary = {{"merged", merged},
                            {"copied", copied},
                            {"skipped", skipped},
                            {"total", tensors.size()},
                            {"wall_time_s", wall_time_s},
                            {"peak_tensor_bytes", peak_tensor_bytes},
                            {"max_tensor_bytes", max_tensor_bytes},
                            {"threads", threads},
                            {"warnings", warnings},
                            {"recipe", geomerge::to_json(recipe)},
                            {"version", kVersion}};
  return {{"summary", std::move(summary)}, {"tensors", std::move(tensors_j)}};
}

void MergeReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": cannot write report");
  out << to_json().dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, path.string() + ": report write failed");
}

MergeReport run_merge(const MergeRecipe& recipe) {
  recipe.validate();
  const Inputs in = open_inputs(recipe);
  const PairingPlan plan = validate_pairing(in.a, in.b, in.base ? &*in.base : nullptr, recipe.tensor_filters);
  MergeJob job(recipe, recipe.method, in, plan);
  MergeReport report = job.run(recipe.output);
  if (recipe.report) report.write_json(*recipe.report);
  return report;
}

std::string format_lambda(double lambda) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, lambda);
  return std::string(buf, end);
}

std::filesystem::path sweep_output_path(const std::filesystem::path& out, double lambda) {
  auto name = out.stem().string() + "-l" + format_lambda(lambda) + out.extension().string();
  return out.parent_path() / name;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    runs.push_back({{"lambda", lambdas[i]}, {"output", outputs[i].string()}, {"report", reports[i].to_json()}});
  }
  return {{"sweep", std::move(runs)}};
}

SweepResult sweep(const MergeRecipe& recipe, std::span<const double> lambdas) {
  if (!is_lambda_parameterized(recipe.method))
    throw Error(ErrorCode::InvalidRecipe,
                std::string("sweep needs a lambda-parameterized method (geodesic or linear), got ") +
                    std::string(method_name(recipe.method)));
  if (lambdas.empty()) throw Error(ErrorCode::InvalidRecipe, "sweep needs at least one lambda");
  recipe.validate();
  for (double l : lambdas) {
    MergeMethod m = recipe.method;
    std::visit([&](auto& p) {
      if constexpr (requires { p.lambda; }) p.lambda = l;
    }, m);
    validate(m);
  }
  const Inputs in = open_inputs(recipe);
  const PairingPlan plan = validate_pairing(in.a, in.b, in.base ? &*in.base : nullptr, recipe.tensor_filters);

  SweepResult result;
  for (double l : lambdas) {
    MergeMethod m = recipe.method;
    std::visit([&](auto& p) {
      if constexpr (requires { p.lambda; }) p.lambda = l;
    }, m);
    const auto out = sweep_output_path(recipe.output, l);
    MergeJob job(recipe, m, in, plan);
    result.lambdas.push_back(l);
    result.outputs.push_back(out);
    result.reports.push_back(job.run(out));
  }
  if (recipe.report) {
    std::ofstream f(*recipe.report);
    if (!f) throw Error(ErrorCode::IoFailure, recipe.report->string() + ": cannot write report");
    f << result.to_json().dump(2) << '\n';
  }
  return result;
}

}  // namespace geomerge
