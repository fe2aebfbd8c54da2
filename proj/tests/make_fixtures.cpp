// Regenerates the golden fixture tree:
//   ./build/tests/make_fixtures fixtures
#include <fstream>
#include <iostream>

#include "fixture_set.hpp"
#include "geomerge/engine.hpp"

using namespace geomerge;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <fixtures-dir>\n";
    return 2;
  }
  const fs::path root = argv[1];
  fs::create_directories(root / "inputs");
  fs::create_directories(root / "recipes");
  fs::create_directories(root / "expected");

  const auto t = testkit::generate_tensors(testkit::fixture_spec());
  write_checkpoint(root / "inputs/chip.safetensors", t.a, {{"role", "chip"}});
  write_checkpoint(root / "inputs/instruct.safetensors", t.b, {{"role", "instruct"}});
  write_checkpoint(root / "inputs/base.safetensors", t.base, {{"role", "base"}});

  for (const auto& c : testkit::fixture_cases()) {
    std::ofstream(root / "recipes" / (c.name + ".json")) << c.recipe.dump(2) << '\n';
    auto layer = RecipeLayer::from_json(c.recipe);
    layer.a = (root / *layer.a).string();
    layer.b = (root / *layer.b).string();
    if (layer.base) layer.base = (root / *layer.base).string();
    layer.out = (root / "expected" / (c.name + ".safetensors")).string();
    const auto report = run_merge(layer.resolve());
    std::ofstream(root / "expected" / (c.name + ".report.json"))
        << testkit::stable_report(report.to_json()).dump(2) << '\n';
    std::cout << c.name << ": " << report.merged << " merged, " << report.copied << " copied, " << report.skipped
              << " skipped\n";
  }
  return 0;
}
