#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "geomerge/engine.hpp"
#include "geomerge/error.hpp"
#include "oracle.hpp"
#include "synth.hpp"

using namespace geomerge;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ErrorCode error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

MergeRecipe recipe_for(const testkit::SyntheticPaths& p, const fs::path& out, MergeMethod m = method::Geodesic{0.6}) {
  MergeRecipe r;
  r.method = m;
  r.input_a = p.a;
  r.input_b = p.b;
  r.base = p.base;
  r.output = out;
  return r;
}

std::vector<double> values_of(const fs::path& path, const std::string& name) {
  return Checkpoint::open(path).read_tensor(name).values();
}

}  // namespace

TEST_CASE("validate_pairing") {
  const auto dir = testkit::scratch_dir("engine");
  testkit::SyntheticSpec spec;
  spec.tensor_count = 4;
  const auto p = testkit::generate_checkpoint_pair(spec, dir);
  const auto a = Checkpoint::open(p.a), b = Checkpoint::open(p.b);

  SUBCASE("identical architectures merge everything") {
    const auto plan = validate_pairing(a, b, nullptr, {});
    CHECK(plan.entries.size() == 4);
    CHECK(plan.count(PlanAction::Merge) == 4);
    CHECK(plan.entries[2].name == "layers.2.weight");
  }
  SUBCASE("filters select, the rest is copied") {
    const std::vector<std::string> f = {"layers.[13].*"};
    const auto plan = validate_pairing(a, b, nullptr, f);
    CHECK(plan.entries[0].action == PlanAction::Copy);
    CHECK(plan.entries[1].action == PlanAction::Merge);
    CHECK(plan.entries[3].action == PlanAction::Merge);
  }
  SUBCASE("filter-matched tensor missing from b") {
    std::vector<TensorRecord> ta = {TensorRecord::from_values("lm_head.weight", DType::F32, {2}, std::vector<double>{1, 2}),
                                    TensorRecord::from_values("x", DType::F32, {1}, std::vector<double>{1})};
    write_checkpoint(dir / "ha.st", ta);
    write_checkpoint(dir / "hb.st", std::vector{ta[1]});
    const auto ha = Checkpoint::open(dir / "ha.st"), hb = Checkpoint::open(dir / "hb.st");
    try {
      validate_pairing(ha, hb, nullptr, std::vector<std::string>{"lm_head.*"});
      FAIL("expected MissingTensor");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingTensor);
      CHECK(std::string(e.what()).find("lm_head.weight") != std::string::npos);
    }
    // Not selected by a filter: no requirement on b.
    CHECK(validate_pairing(ha, hb, nullptr, std::vector<std::string>{"x"}).entries[0].action == PlanAction::Copy);
  }
  SUBCASE("vocabulary-extended embedding") {
    const std::size_t d = 4;
    write_checkpoint(dir / "ea.st", std::vector{TensorRecord::from_values("embed_tokens.weight", DType::BF16, {32000, d},
                                                                          std::vector<double>(32000 * d, 0.5))});
    write_checkpoint(dir / "eb.st", std::vector{TensorRecord::from_values("embed_tokens.weight", DType::BF16, {32100, d},
                                                                          std::vector<double>(32100 * d, 0.5))});
    try {
      validate_pairing(Checkpoint::open(dir / "ea.st"), Checkpoint::open(dir / "eb.st"), nullptr, {});
      FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ShapeMismatch);
      CHECK(std::string(e.what()).find("embed_tokens.weight") != std::string::npos);
    }
  }
  SUBCASE("bad glob") {
    CHECK(error_of([&] { validate_pairing(a, b, nullptr, std::vector<std::string>{"layers.[0"}); }) ==
          ErrorCode::InvalidRecipe);
  }
}

TEST_CASE("recipe validation happens before any I/O") {
  MergeRecipe r;
  r.input_a = "/nonexistent/a";
  r.input_b = "/nonexistent/b";
  r.output = "/nonexistent/out";
  r.tensor_filters = {"[abc"};
  CHECK(error_of([&] { run_merge(r); }) == ErrorCode::InvalidRecipe);
  r.tensor_filters.clear();
  r.method = method::Ties{};
  CHECK(error_of([&] { run_merge(r); }) == ErrorCode::MissingBase);
  r.method = method::Geodesic{};
  r.base = "/nonexistent/base";
  CHECK(error_of([&] { run_merge(r); }) == ErrorCode::InvalidRecipe);
  r.base.reset();
  CHECK(error_of([&] { run_merge(r); }) == ErrorCode::IoFailure);
}

TEST_CASE("geodesic endpoints through the full pipeline") {
  const auto dir = testkit::scratch_dir("engine");
  testkit::SyntheticSpec spec;
  spec.tensor_count = 5;
  spec.dtype = DType::F32;
  spec.shapes = {{{8, 8}, 1.0}, {{16}, 1.0}, {{}, 0.5}};
  const auto p = testkit::generate_checkpoint_pair(spec, dir);
  const auto a = Checkpoint::open(p.a), b = Checkpoint::open(p.b);

  for (double lam : {0.0, 1.0}) {
    run_merge(recipe_for(p, dir / "m.st", method::Geodesic{lam}));
    const auto m = Checkpoint::open(dir / "m.st");
    const auto& ref = lam == 0.0 ? b : a;
    for (const auto& info : ref.tensors()) CHECK(m.read_tensor(info.name).data == ref.read_tensor(info).data);
  }
}

TEST_CASE("geodesic merge matches the oracle per tensor") {
  const auto dir = testkit::scratch_dir("engine");
  testkit::SyntheticSpec spec;
  spec.tensor_count = 2;
  spec.shapes = {{{6, 5}, 1.0}};
  const auto p = testkit::generate_checkpoint_pair(spec, dir);
  auto r = recipe_for(p, dir / "m.st", method::Geodesic{0.6});
  r.report = dir / "report.json";
  const auto report = run_merge(r);
  CHECK(report.merged == 2);
  for (const auto& t : report.tensors) {
    const auto& name = t.stats.tensor_name;
    const auto want = testkit::oracle_geodesic(values_of(p.a, name), values_of(p.b, name), 0.6);
    CHECK(testkit::max_rel_error(values_of(dir / "m.st", name), want) < 1e-10);
    CHECK(t.stats.fallback == Fallback::None);
    CHECK(t.stats.theta_radians > 0.0);
  }
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(j["summary"]["merged"] == 2);
  CHECK(j["tensors"].size() == 2);
  CHECK(j["tensors"][0]["tensor_name"] == "layers.0.weight");
  CHECK(j["summary"]["recipe"]["lambda"] == 0.6);

  const auto m = Checkpoint::open(dir / "m.st");
  CHECK(m.metadata().at("geomerge.method") == "geodesic");
  CHECK(m.metadata().at("geomerge.seed") == "0");
  CHECK(nlohmann::json::parse(m.metadata().at("geomerge.params"))["lambda"] == 0.6);
  CHECK(m.metadata().count("geomerge.version") == 1);
}

TEST_CASE("thread count does not change output bytes") {
  const auto dir = testkit::scratch_dir("engine");
  testkit::SyntheticSpec spec;
  spec.tensor_count = 24;
  spec.dtype = DType::BF16;
  spec.shapes = {{{32, 16}, 1.0}, {{7}, 1.0}, {{3, 3, 3}, 1.0}};
  spec.with_base = true;
  const auto p = testkit::generate_checkpoint_pair(spec, dir);
  const MergeMethod methods[] = {method::Geodesic{0.6}, method::Linear{0.4}, method::TaskArithmetic{0.9},
                                 method::Ties{0.3, 1.0}, method::Della{0.3, 1.0, 0.1}};
  for (const auto& m : methods) {
    auto r = recipe_for(p, dir / "t1.st", m);
    if (!requires_base(m)) r.base.reset();
    r.seed = 99;
    r.threads = 1;
    run_merge(r);
    r.output = dir / "t8.st";
    r.threads = 8;
    const auto rep = run_merge(r);
    CHECK(slurp(dir / "t1.st") == slurp(dir / "t8.st"));
    CHECK(rep.peak_tensor_bytes <= rep.max_tensor_bytes * 8);
    CHECK(rep.merged + rep.copied + rep.skipped == spec.tensor_count);
  }
}

TEST_CASE("order preservation and copy-through fidelity") {
  const auto dir = testkit::scratch_dir("engine");
  testkit::SyntheticSpec spec;
  spec.tensor_count = 6;
  spec.dtype = DType::F16;
  const auto p = testkit::generate_checkpoint_pair(spec, dir);
  auto r = recipe_for(p, dir / "m.st");
  r.tensor_filters = {"layers.1.*", "layers.4.*"};
  r.dtype_policy = DTypePolicy::parse("F32");
  const auto report = run_merge(r);
  CHECK(report.merged == 2);
  CHECK(report.copied == 4);
  const auto a = Checkpoint::open(p.a), m = Checkpoint::open(dir / "m.st");
  REQUIRE(m.tensors().size() == a.tensors().size());
  for (std::size_t i = 0; i < a.tensors().size(); ++i) {
    CHECK(m.tensors()[i].name == a.tensors()[i].name);
    const bool merged = i == 1 || i == 4;
    CHECK(m.tensors()[i].dtype == (merged ? DType::F32 : DType::F16));
    if (!merged) CHECK(m.read_tensor(m.tensors()[i]).data == a.read_tensor(a.tensors()[i]).data);
  }
}

TEST_CASE("dtype policies") {
  const auto dir = testkit::scratch_dir("engine");
  write_checkpoint(dir / "a.st", std::vector{TensorRecord::from_values("w", DType::F16, {3}, std::vector<double>{1, 2, 3})});
  write_checkpoint(dir / "b.st", std::vector{TensorRecord::from_values("w", DType::BF16, {3}, std::vector<double>{3, 1, 2})});
  MergeRecipe r;
  r.input_a = dir / "a.st";
  r.input_b = dir / "b.st";
  r.output = dir / "m.st";
  run_merge(r);
  CHECK(Checkpoint::open(r.output).tensors()[0].dtype == DType::F16);
  r.dtype_policy = DTypePolicy::parse("preserve_b");
  run_merge(r);
  CHECK(Checkpoint::open(r.output).tensors()[0].dtype == DType::BF16);
  r.dtype_policy = DTypePolicy::parse("f64");
  run_merge(r);
  CHECK(Checkpoint::open(r.output).tensors()[0].dtype == DType::F64);
  CHECK_THROWS_AS(DTypePolicy::parse("int8"), Error);
}

TEST_CASE("singular tensors") {
  const auto dir = testkit::scratch_dir("engine");
  const std::vector<double> w = {0.5, -1.25, 2.0, 0.75};
  std::vector<double> neg(w);
  for (auto& x : neg) x = -x;

  SUBCASE("self-merge returns the input exactly") {
    write_checkpoint(dir / "a.st", std::vector{TensorRecord::from_values("w", DType::F64, {4}, w)});
    auto r = MergeRecipe{};
    r.input_a = r.input_b = dir / "a.st";
    r.output = dir / "m.st";
    const auto rep = run_merge(r);
    CHECK(rep.tensors[0].stats.fallback == Fallback::CollinearLerp);
    CHECK(values_of(r.output, "w") == w);
  }
  SUBCASE("negated input is fatal and leaves no output") {
    write_checkpoint(dir / "a.st", std::vector{TensorRecord::from_values("w", DType::F64, {4}, w)});
    write_checkpoint(dir / "b.st", std::vector{TensorRecord::from_values("w", DType::F64, {4}, neg)});
    MergeRecipe r;
    r.input_a = dir / "a.st";
    r.input_b = dir / "b.st";
    r.output = dir / "m.st";
    try {
      run_merge(r);
      FAIL("expected AntipodalDirections");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AntipodalDirections);
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(r.output));
    CHECK_FALSE(fs::exists(dir / "m.st.partial"));
  }
  SUBCASE("zero-norm tensor is copied through and flagged") {
    testkit::SyntheticSpec spec;
    spec.tensor_count = 3;
    spec.zero_tensor = 1;
    const auto p = testkit::generate_checkpoint_pair(spec, dir);
    const auto rep = run_merge(recipe_for(p, dir / "m.st"));
    CHECK(rep.skipped == 1);
    CHECK(rep.merged == 2);
    CHECK(rep.tensors[1].stats.fallback == Fallback::CopiedThrough);
    CHECK(rep.warnings.size() == 1);
    CHECK(Checkpoint::open(dir / "m.st").read_tensor("layers.1.weight").data ==
          Checkpoint::open(p.a).read_tensor("layers.1.weight").data);
  }
  SUBCASE("zero-element tensors are copied and flagged") {
    const std::vector<TensorRecord> ts = {TensorRecord::from_values("e", DType::F32, {0, 4}, std::vector<double>{}),
                                          TensorRecord::from_values("w", DType::F32, {4}, w)};
    write_checkpoint(dir / "a.st", ts);
    write_checkpoint(dir / "b.st", std::vector{ts[0], TensorRecord::from_values("w", DType::F32, {4}, std::vector<double>{1, 1, 1, 1})});
    MergeRecipe r;
    r.input_a = dir / "a.st";
    r.input_b = dir / "b.st";
    r.output = dir / "m.st";
    const auto rep = run_merge(r);
    CHECK(rep.tensors[0].action == TensorAction::Skipped);
    CHECK(rep.tensors[0].stats.fallback == Fallback::CopiedThrough);
    CHECK(rep.tensors[1].action == TensorAction::Merged);
  }
}

TEST_CASE("every method is a fixpoint on a self-merge") {
  const auto dir = testkit::scratch_dir("engine");
  testkit::SyntheticSpec spec;
  spec.tensor_count = 4;
  spec.shapes = {{{5, 7}, 1.0}};
  const auto p = testkit::generate_checkpoint_pair(spec, dir);
  const MergeMethod methods[] = {method::Geodesic{0.6}, method::Linear{0.6}, method::TaskArithmetic{1.0},
                                 method::Ties{0.2, 1.0}, method::Della{1.0, 1.0, 0.0}};
  for (const auto& m : methods) {
    MergeRecipe r;
    r.method = m;
    r.input_a = r.input_b = p.a;
    if (requires_base(m)) r.base = p.a;
    r.output = dir / "m.st";
    run_merge(r);
    for (const auto& info : Checkpoint::open(p.a).tensors())
      CHECK(testkit::max_rel_error(values_of(r.output, info.name), values_of(p.a, info.name)) < 1e-10);
  }
}

TEST_CASE("sweep") {
  const auto dir = testkit::scratch_dir("engine");
  testkit::SyntheticSpec spec;
  spec.tensor_count = 3;
  spec.shapes = {{{4, 6}, 1.0}};
  spec.values.kind = testkit::ValueDistribution::Kind::Uniform;
  spec.values.lo = -2;
  spec.values.hi = 3;
  const auto p = testkit::generate_checkpoint_pair(spec, dir);

  SUBCASE("endpoints") {
    const std::vector<double> l = {0, 0.5, 1};
    const auto res = sweep(recipe_for(p, dir / "s.st"), l);
    REQUIRE(res.outputs.size() == 3);
    CHECK(res.outputs[0] == dir / "s-l0.st");
    CHECK(res.outputs[1] == dir / "s-l0.5.st");
    for (const auto& info : Checkpoint::open(p.a).tensors()) {
      CHECK(testkit::max_rel_error(values_of(res.outputs[0], info.name), values_of(p.b, info.name)) < 1e-12);
      CHECK(testkit::max_rel_error(values_of(res.outputs[2], info.name), values_of(p.a, info.name)) < 1e-12);
    }
  }
  SUBCASE("single point equals run_merge") {
    const std::vector<double> l = {0.6};
    auto r = recipe_for(p, dir / "s.st");
    const auto res = sweep(r, l);
    r.output = dir / "direct.st";
    run_merge(r);
    CHECK(slurp(res.outputs[0]) == slurp(dir / "direct.st"));
  }
  SUBCASE("norm law across an 11-point grid") {
    std::vector<double> l;
    for (int k = 0; k <= 10; ++k) l.push_back(k / 10.0);
    const auto res = sweep(recipe_for(p, dir / "s.st"), l);
    for (std::size_t i = 0; i < l.size(); ++i) {
      for (const auto& info : Checkpoint::open(p.a).tensors()) {
        const double na = frobenius_norm(values_of(p.a, info.name));
        const double nb = frobenius_norm(values_of(p.b, info.name));
        const double want = std::pow(na, l[i]) * std::pow(nb, 1 - l[i]);
        CHECK(std::abs(frobenius_norm(values_of(res.outputs[i], info.name)) / want - 1) < 1e-10);
      }
    }
  }
  SUBCASE("needs a lambda method") {
    auto r = recipe_for(p, dir / "s.st", method::TaskArithmetic{});
    r.base = p.a;
    const std::vector<double> l = {0.5};
    CHECK(error_of([&] { sweep(r, l); }) == ErrorCode::InvalidRecipe);
  }
}

TEST_CASE("recipe layering: defaults < file < flags") {
  RecipeLayer defaults;
  CHECK(std::get<method::Geodesic>(defaults.resolve().method).lambda == 0.6);

  auto file = RecipeLayer::from_json(nlohmann::json{{"method", "ties"}, {"density", 0.4}, {"a", "x"}, {"threads", "auto"}});
  RecipeLayer flags;
  flags.scaling = 0.5;
  file.overlay(flags);
  const auto r = file.resolve();
  const auto& t = std::get<method::Ties>(r.method);
  CHECK(t.density == 0.4);
  CHECK(t.scaling == 0.5);
  CHECK(r.threads == 0);
  CHECK(r.input_a == "x");

  const auto d = RecipeLayer::from_json(nlohmann::json{{"method", "della"}}).resolve();
  CHECK(std::get<method::Della>(d.method).epsilon == 0.1);
  CHECK(std::get<method::Della>(d.method).density == 0.2);
  CHECK_THROWS_AS(RecipeLayer::from_json(nlohmann::json{{"lamda", 0.3}}), Error);
  CHECK_THROWS_AS(RecipeLayer::from_json(nlohmann::json{{"method", "nope"}}).resolve(), Error);
  RecipeLayer bad_threads;
  bad_threads.threads = "0";
  CHECK_THROWS_AS(bad_threads.resolve(), Error);
}

TEST_CASE("glob matching") {
  CHECK(glob_match("layers.*.weight", "layers.3.weight"));
  CHECK_FALSE(glob_match("layers.*.weight", "layers.3.bias"));
  CHECK(glob_match("*", "a/b.c"));
  CHECK_NOTHROW(validate_glob("layers.[!0]*"));
  CHECK_THROWS_AS(validate_glob("x[a"), Error);
  CHECK_THROWS_AS(validate_glob("x\\"), Error);
}
