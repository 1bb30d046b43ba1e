#include "rfrp/finetune.hpp"
#include "rfrp/harness/checkpoint.hpp"
#include "rfrp/harness/config.hpp"
#include "rfrp/harness/dataset.hpp"
#include "rfrp/moe.hpp"
#include "rfrp/optim.hpp"
#include "rfrp/pretrain.hpp"
#include "rfrp/rfnerf.hpp"
#include "rfrp/spectrum.hpp"

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <limits>

namespace py = pybind11;
using namespace rfrp;

namespace {

spectrum::ArrayGeometry make_geometry(int side, double spacing, double wavelength, const Vec3& origin,
                                      const Mat3& rotation) {
  spectrum::ArrayGeometry g;
  g.side = side;
  g.element_spacing = spacing;
  g.wavelength = wavelength;
  g.origin = origin;
  g.rotation = rotation;
  g.validate();
  return g;
}

// One dict per scene: spectra (S, A, 36, 9) and tx (S, 3) with NaN rows for unlabeled samples.
py::list scenes_to_python(const std::vector<data::SceneData>& scenes, const char* split) {
  py::list out;
  for (const auto& sd : scenes) {
    const auto n = static_cast<py::ssize_t>(sd.samples.size());
    const auto arrays = static_cast<py::ssize_t>(sd.scene.arrays.size());
    py::array_t<double> spectra({n, arrays, py::ssize_t{kAzimuthBins}, py::ssize_t{kElevationBins}});
    py::array_t<double> tx({n, py::ssize_t{3}});
    auto s = spectra.mutable_unchecked<4>();
    auto t = tx.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < n; ++i) {
      const auto& sample = sd.samples[i];
      for (py::ssize_t a = 0; a < arrays; ++a)
        for (int r = 0; r < kAzimuthBins; ++r)
          for (int c = 0; c < kElevationBins; ++c) s(i, a, r, c) = sample.spectra[a].magnitudes(r, c);
      for (int k = 0; k < 3; ++k)
        t(i, k) = sample.tx ? (*sample.tx)(k) : std::numeric_limits<double>::quiet_NaN();
    }
    py::list origins;
    for (const auto& g : sd.scene.arrays) origins.append(Vec3(g.origin));
    py::dict d;
    d["scene_id"] = sd.scene.scene_id;
    d["split"] = split;
    d["spectra"] = spectra;
    d["tx"] = tx;
    d["array_origins"] = origins;
    d["bounds_lo"] = Vec3(sd.scene.bounds.lo);
    d["bounds_hi"] = Vec3(sd.scene.bounds.hi);
    out.append(d);
  }
  return out;
}

py::list dataset_to_python(const harness::Dataset& ds) {
  py::list out = scenes_to_python(ds.pretrain, "pretrain");
  for (auto item : scenes_to_python(ds.test, "test")) out.append(item);
  return out;
}

}  // namespace

PYBIND11_MODULE(_rfrp, m) {
  m.doc() = "rfrp native bindings";
  m.attr("AZIMUTH_BINS") = kAzimuthBins;
  m.attr("ELEVATION_BINS") = kElevationBins;

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<DegenerateInput>(m, "DegenerateInput", PyExc_ArithmeticError);
  py::register_exception<harness::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def(
      "bin_of",
      [](double az, double el) {
        auto b = spectrum::bin_of({az, el});
        return std::make_pair(b.azimuth, b.elevation);
      },
      py::arg("azimuth_deg"), py::arg("elevation_deg"));
  m.def(
      "bin_center",
      [](int i, int j) {
        auto d = spectrum::bin_center(i, j);
        return std::make_pair(d.azimuth_deg, d.elevation_deg);
      },
      py::arg("azimuth_bin"), py::arg("elevation_bin"));

  m.def(
      "steering_weights",
      [](double az, double el, int side, double spacing, double wavelength) {
        auto g = make_geometry(side, spacing, wavelength, Vec3::Zero(), Mat3::Identity());
        return ComplexVector(spectrum::steering_weights(g, spectrum::Direction{az, el}));
      },
      py::arg("azimuth_deg"), py::arg("elevation_deg"), py::arg("side") = 4, py::arg("spacing") = 0.5,
      py::arg("wavelength") = 0.125);

  m.def(
      "spatial_spectrum",
      [](const Vec3& tx, const Vec3& origin, const Mat3& rotation, double noise_std, std::uint64_t seed, int side,
         double spacing, double wavelength) {
        spectrum::Scene scene;
        scene.scene_id = "py";
        scene.wavelength = wavelength;
        scene.arrays.push_back(make_geometry(side, spacing, wavelength, origin, rotation));
        scene.bounds.lo = Vec3::Constant(-1e9);
        scene.bounds.hi = Vec3::Constant(1e9);
        Rng rng(seed);
        auto signal = spectrum::synthesize_measurement(scene, tx, 0);
        return Matrix(spectrum::compute_spectrum(scene.arrays[0], signal, noise_std, rng).magnitudes);
      },
      "36 x 9 line-of-sight spectrum of a transmitter seen by one array.", py::arg("tx"),
      py::arg("origin") = Vec3(Vec3::Zero()), py::arg("rotation") = Mat3(Mat3::Identity()), py::arg("noise_std") = 0.0,
      py::arg("seed") = 0, py::arg("side") = 4, py::arg("spacing") = 0.5, py::arg("wavelength") = 0.125);

  m.def(
      "triangulate",
      [](const std::vector<Vec3>& origins, const std::vector<Vec3>& directions) {
        if (origins.size() != directions.size()) throw InvalidArgument("origins and directions differ in length");
        std::vector<finetune::Ray> rays;
        for (std::size_t i = 0; i < origins.size(); ++i) rays.push_back({origins[i], directions[i].normalized()});
        return Vec3(finetune::triangulate(rays));
      },
      py::arg("origins"), py::arg("directions"));

  m.def(
      "ssim", [](const Matrix& a, const Matrix& b) { return pretrain::ssim(a, b); }, py::arg("a"), py::arg("b"));
  m.def("lr_at", &optim::lr_at, py::arg("step"), py::arg("total_steps"), py::arg("warmup_steps"),
        py::arg("lr_min") = 3e-5, py::arg("lr_max") = 3e-4);
  m.def("masked_count", &pretrain::masked_count, py::arg("ratio"));
  m.def(
      "fourier_encode", [](double x, int dim) { return RowVector(rfnerf::fourier_encode(x, dim)); }, py::arg("x"),
      py::arg("dim"));
  m.def("positional_encoding", &encoder::positional_encoding, py::arg("position"), py::arg("dim"));

  m.def("top_k_indices", &moe::top_k_indices, py::arg("values"), py::arg("k"));
  m.def(
      "gate",
      [](const Matrix& tokens, const Matrix& centroids, int top_k) {
        auto r = moe::gate(tokens, centroids, top_k);
        return py::make_tuple(r.scores, r.gates, r.selected);
      },
      "Returns (scores, gates, selected) for Top-K routing.", py::arg("tokens"), py::arg("centroids"),
      py::arg("top_k"));

  m.def("desk_config_json", [] { return harness::config_to_json(harness::desk_config()); });
  m.def(
      "config_to_json", [](const std::string& text) { return harness::config_to_json(harness::parse_config(text)); },
      "Parse, validate and re-emit a config with all defaults filled in.", py::arg("json_text"));

  m.def(
      "generate_dataset",
      [](const std::string& config_json, std::uint64_t seed, const std::string& dir) {
        auto config = harness::merge_config(harness::desk_config(), config_json);
        auto ds = harness::generate_dataset(config.dataset, seed);
        if (!dir.empty()) harness::write_dataset(ds, dir);
        return dataset_to_python(ds);
      },
      "Generate the corpus described by the dataset section (merged over desk defaults).",
      py::arg("config_json") = "{}", py::arg("seed") = 7, py::arg("dir") = "");
  m.def(
      "read_dataset", [](const std::string& dir) { return dataset_to_python(harness::read_dataset(dir)); },
      py::arg("dir"));
  m.def(
      "write_dataset",
      [](const std::string& config_json, std::uint64_t seed, const std::string& dir) {
        auto config = harness::merge_config(harness::desk_config(), config_json);
        harness::write_dataset(harness::generate_dataset(config.dataset, seed), dir);
      },
      py::arg("config_json"), py::arg("seed"), py::arg("dir"));

  m.def(
      "checkpoint_summary",
      [](const std::string& path) {
        auto state = harness::load_checkpoint(path);
        auto s = harness::summarize(state);
        py::dict d;
        d["version"] = s.version;
        d["step"] = s.step;
        d["encoder_parameters"] = s.encoder_parameters;
        d["decoders"] = s.decoders;
        d["optimizer_entries"] = s.optimizer_entries;
        return d;
      },
      py::arg("path"));
}
