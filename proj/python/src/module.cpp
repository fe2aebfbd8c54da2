#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "geomerge/checkpoint.hpp"
#include "geomerge/cli.hpp"
#include "geomerge/engine.hpp"
#include "geomerge/error.hpp"
#include "geomerge/geometry.hpp"
#include "geomerge/methods.hpp"
#include "geomerge/recipe.hpp"
#include "geomerge/version.hpp"

namespace py = pybind11;
using namespace geomerge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Array shaped_like(const std::vector<double>& v, const Array& like) {
  std::vector<py::ssize_t> shape(like.shape(), like.shape() + like.ndim());
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array flat(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

void same_size(const Array& a, const Array& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " elements");
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

MergeRecipe recipe_from(const py::object& o) {
  const auto layer = py::isinstance<py::str>(o) ? RecipeLayer::from_file(o.cast<std::string>())
                                                : RecipeLayer::from_json(from_python(o));
  return layer.resolve();
}

py::dict stats_dict(const GeometryStats& s) {
  py::dict d;
  d["norm_a"] = s.norm_a;
  d["norm_b"] = s.norm_b;
  d["theta_radians"] = s.theta_radians;
  d["fallback"] = std::string(to_string(s.fallback));
  d["merged_norm"] = s.merged_norm;
  return d;
}

std::vector<std::vector<double>> to_vectors(const std::vector<Array>& xs, const Array& base) {
  std::vector<std::vector<double>> out;
  for (const auto& x : xs) {
    same_size(x, base);
    out.emplace_back(x.data(), x.data() + x.size());
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_geomerge, m) {
  m.attr("__version__") = std::string(kVersion);

  static py::exception<Error> error(m, "GeomergeError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::handle(error.ptr())(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  m.def("project_to_sphere", [](const Array& w) {
    auto p = project_to_sphere(view(w));
    return py::make_tuple(shaped_like(p.direction, w), p.magnitude);
  }, py::arg("w"));

  m.def("angle_between", [](const Array& a, const Array& b) {
    same_size(a, b);
    return angle_between(project_to_sphere(view(a)), project_to_sphere(view(b)));
  }, py::arg("a"), py::arg("b"));

  m.def("geodesic_merge", [](const Array& a, const Array& b, double lam, double collinear, double antipodal) {
    same_size(a, b);
    GeodesicParams params{lam, collinear, antipodal};
    auto r = geodesic_merge(view(a), view(b), params);
    return py::make_tuple(shaped_like(r.values, a), stats_dict(r.stats));
  }, py::arg("a"), py::arg("b"), py::arg("lam") = 0.6,
        py::arg("collinear_threshold") = GeodesicParams{}.collinear_threshold,
        py::arg("antipodal_threshold") = GeodesicParams{}.antipodal_threshold);

  m.def("merge_linear", [](const Array& a, const Array& b, double lam) {
    same_size(a, b);
    return shaped_like(merge_linear(view(a), view(b), lam), a);
  }, py::arg("a"), py::arg("b"), py::arg("lam") = 0.6);

  m.def("merge_task_arithmetic", [](const Array& a, const Array& b, const Array& base, double scaling) {
    same_size(a, base);
    same_size(b, base);
    return shaped_like(merge_task_arithmetic(view(a), view(b), view(base), scaling), base);
  }, py::arg("a"), py::arg("b"), py::arg("base"), py::arg("scaling") = 1.0);

  m.def("trim_task_vector", [](const Array& tau, double density) {
    return shaped_like(trim_task_vector(view(tau), density), tau);
  }, py::arg("tau"), py::arg("density"));

  m.def("merge_ties", [](const std::vector<Array>& models, const Array& base, double density, double scaling) {
    validate(method::Ties{density, scaling});
    std::vector<std::vector<double>> taus;
    for (const auto& w : to_vectors(models, base)) taus.push_back(trim_task_vector(task_vector(w, view(base)), density));
    return shaped_like(merge_ties(taus, view(base), scaling), base);
  }, py::arg("models"), py::arg("base"), py::arg("density") = 0.2, py::arg("scaling") = 1.0);

  m.def("merge_della", [](const std::vector<Array>& models, const Array& base, double density, double epsilon,
                          double scaling, std::uint64_t seed, const std::string& name) {
    const method::Della params{density, scaling, epsilon};
    validate(params);
    std::vector<std::vector<double>> taus;
    for (const auto& w : to_vectors(models, base)) taus.push_back(task_vector(w, view(base)));
    return shaped_like(merge_della(taus, view(base), params, seed, name), base);
  }, py::arg("models"), py::arg("base"), py::arg("density") = 0.2, py::arg("epsilon") = 0.1,
        py::arg("scaling") = 1.0, py::arg("seed") = 0, py::arg("name") = "");

  m.def("run_merge", [](const py::object& recipe) {
    const auto r = recipe_from(recipe);
    MergeReport report;
    {
      py::gil_scoped_release release;
      report = run_merge(r);
    }
    return to_python(report.to_json());
  }, py::arg("recipe"), "Run a merge from a recipe dict or recipe file path; returns the report.");

  m.def("sweep", [](const py::object& recipe, const std::vector<double>& lambdas) {
    const auto r = recipe_from(recipe);
    SweepResult result;
    {
      py::gil_scoped_release release;
      result = sweep(r, lambdas);
    }
    return to_python(result.to_json());
  }, py::arg("recipe"), py::arg("lambdas"));

  m.def("inspect", [](const std::filesystem::path& path) {
    const auto ck = Checkpoint::open(path);
    py::list tensors;
    for (const auto& t : ck.tensors()) {
      py::dict d;
      d["name"] = t.name;
      d["dtype"] = std::string(to_string(t.dtype));
      d["shape"] = t.shape;
      d["data_offsets"] = py::make_tuple(t.begin, t.end);
      tensors.append(d);
    }
    py::dict out;
    out["tensors"] = tensors;
    out["metadata"] = ck.metadata();
    out["header_bytes"] = ck.header_size();
    return out;
  }, py::arg("path"));

  m.def("read_tensor", [](const std::filesystem::path& path, const std::string& name) {
    const auto t = Checkpoint::open(path).read_tensor(name);
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    Array out(shape);
    const auto v = t.values();
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
  }, py::arg("path"), py::arg("name"), "Read one tensor, widened to float64.");

  m.def("write_checkpoint", [](const std::filesystem::path& path, const py::dict& tensors, const std::string& dtype,
                               const Metadata& metadata) {
    const auto dt = parse_dtype(dtype);
    if (!dt) throw Error(ErrorCode::UnsupportedDType, "unknown dtype '" + dtype + "'");
    std::vector<TensorRecord> records;
    for (const auto& [k, v] : tensors) {
      const auto a = v.cast<Array>();
      Shape shape(a.shape(), a.shape() + a.ndim());
      records.push_back(TensorRecord::from_values(k.cast<std::string>(), *dt, shape, view(a)));
    }
    write_checkpoint(path, records, metadata);
  }, py::arg("path"), py::arg("tensors"), py::arg("dtype") = "F32", py::arg("metadata") = Metadata{});

  m.def("cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"geomerge"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    py::module_::import("sys").attr("stdout").attr("write")(out.str());
    py::module_::import("sys").attr("stderr").attr("write")(err.str());
    return code;
  }, py::arg("args"), "Run the command-line interface in-process and return its exit code.");
}
