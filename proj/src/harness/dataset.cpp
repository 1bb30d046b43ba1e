#include "rfrp/harness/dataset.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rfrp::harness {

using nlohmann::json;
namespace fs = std::filesystem;

const data::SceneData& Dataset::find(const std::string& scene_id) const {
  for (const auto* group : {&pretrain, &test}) {
    for (const auto& s : *group) {
      if (s.scene.scene_id == scene_id) return s;
    }
  }
  throw InvalidArgument("dataset: unknown scene '" + scene_id + "'");
}

namespace {

// Inward normal and in-wall horizontal tangent for the four vertical walls.
struct Wall {
  Vec3 normal;
  Vec3 tangent;
  int fixed_axis;
  bool at_hi;
};

const Wall kWalls[4] = {
    {Vec3(1, 0, 0), Vec3(0, 1, 0), 0, false},
    {Vec3(-1, 0, 0), Vec3(0, -1, 0), 0, true},
    {Vec3(0, 1, 0), Vec3(-1, 0, 0), 1, false},
    {Vec3(0, -1, 0), Vec3(1, 0, 0), 1, true},
};

// Quantize to float precision so the in-memory corpus equals its text form.
double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

spectrum::Scene generate_scene(const DatasetConfig& config, const std::string& scene_id, Rng& rng) {
  config.validate();
  spectrum::Scene scene;
  scene.scene_id = scene_id;
  scene.wavelength = config.wavelength;
  const Vec3 size(rng.uniform(5.0, 8.0), rng.uniform(5.0, 8.0), rng.uniform(2.5, 3.5));
  scene.bounds = {Vec3::Zero(), size};

  const int arrays = config.min_arrays + static_cast<int>(rng.below(
                                             static_cast<std::uint64_t>(config.max_arrays - config.min_arrays + 1)));
  std::vector<int> walls{0, 1, 2, 3};
  for (int i = 0; i < arrays; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(4 - i)));
    std::swap(walls[static_cast<std::size_t>(i)], walls[static_cast<std::size_t>(j)]);
  }
  walls.resize(static_cast<std::size_t>(arrays));
  std::sort(walls.begin(), walls.end());

  const double aperture = (config.array_side - 1) * 0.5 * config.wavelength;
  for (int w : walls) {
    const Wall& wall = kWalls[w];
    spectrum::ArrayGeometry g;
    g.side = config.array_side;
    g.wavelength = config.wavelength;
    g.rotation.col(0) = wall.tangent;
    g.rotation.col(2) = wall.normal;
    g.rotation.col(1) = wall.normal.cross(wall.tangent);
    const int along = 1 - wall.fixed_axis;
    Vec3 origin;
    origin(wall.fixed_axis) = wall.at_hi ? size(wall.fixed_axis) : 0.0;
    // Keep the whole aperture inside the wall.
    const double t = rng.uniform(1.0, size(along) - 1.0);
    origin(along) = t;
    origin(2) = rng.uniform(1.0, size(2) - 1.0 - aperture);
    g.origin = origin;
    scene.arrays.push_back(g);
  }

  const int reflectors = config.min_reflectors + static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                                     config.max_reflectors - config.min_reflectors + 1)));
  for (int r = 0; r < reflectors; ++r) {
    spectrum::Reflector refl;
    refl.position = Vec3(rng.uniform(0.2, size(0) - 0.2), rng.uniform(0.2, size(1) - 0.2), rng.uniform(0.2, size(2) - 0.2));
    refl.coefficient = std::polar(rng.uniform(0.3, 0.8), rng.uniform(0.0, 2.0 * kPi));
    scene.reflectors.push_back(refl);
  }
  scene.validate();
  return scene;
}

data::SceneData generate_samples(const DatasetConfig& config, const spectrum::Scene& scene, int count,
                                 double label_fraction, Rng& rng) {
  require(count >= 1, "generate_samples: count must be >= 1");
  data::SceneData out;
  out.scene = scene;
  std::vector<Eigen::MatrixXcd> steering;
  for (const auto& a : scene.arrays) steering.push_back(spectrum::steering_matrix(a));

  // Exact labeled count, chosen by a seeded shuffle.
  const int labeled = static_cast<int>(std::lround(label_fraction * count));
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  for (int i = count - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
  }
  std::vector<char> is_labeled(static_cast<std::size_t>(count), 0);
  for (int i = 0; i < labeled; ++i) is_labeled[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  const Vec3 margin(0.3, 0.3, 0.5);
  for (int n = 0; n < count; ++n) {
    Vec3 tx;
    bool ok = false;
    while (!ok) {
      for (int c = 0; c < 3; ++c) tx(c) = rng.uniform(scene.bounds.lo(c) + margin(c), scene.bounds.hi(c) - margin(c));
      ok = true;
      for (const auto& a : scene.arrays) ok = ok && (tx - a.origin).norm() > 0.5;
    }
    data::Sample s;
    s.scene_id = scene.scene_id;
    s.index = n;
    for (std::size_t g = 0; g < scene.arrays.size(); ++g) {
      const auto signal = spectrum::synthesize_measurement(scene, tx, static_cast<int>(g));
      Eigen::VectorXcd beam = steering[g] * signal.values / static_cast<double>(scene.arrays[g].element_count());
      const double component = config.noise_std / std::sqrt(2.0);
      spectrum::SpatialSpectrum spec;
      spec.array_index = static_cast<int>(g);
      for (Index k = 0; k < beam.size(); ++k) {
        const double re = rng.normal();
        const double im = rng.normal();
        beam(k) += Complex(component * re, component * im);
        spec.magnitudes(k / kElevationBins, k % kElevationBins) = to_float(std::abs(beam(k)));
      }
      s.spectra.push_back(std::move(spec));
    }
    if (is_labeled[static_cast<std::size_t>(n)]) s.tx = tx.unaryExpr(&to_float);
    out.samples.push_back(std::move(s));
  }
  return out;
}

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset d;
  auto make = [&](const std::string& id, int count, double fraction) {
    Rng rng(mix_seed(seed, stable_hash(id)));
    const auto scene = generate_scene(config, id, rng);
    return generate_samples(config, scene, count, fraction, rng);
  };
  for (int i = 0; i < config.pretrain_scenes; ++i) {
    d.pretrain.push_back(make("pre" + std::to_string(i), config.samples_per_scene, config.pretrain_label_fraction));
  }
  for (int i = 0; i < config.test_scenes; ++i) {
    d.test.push_back(make("test" + std::to_string(i), config.test_samples_per_scene, config.test_label_fraction));
  }
  return d;
}

namespace {

json vec_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }
Vec3 vec_from(const json& j) {
  require(j.is_array() && j.size() == 3, "dataset: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json scene_json(const spectrum::Scene& s) {
  json j;
  j["scene_id"] = s.scene_id;
  j["wavelength"] = s.wavelength;
  j["bounds"] = {{"lo", vec_json(s.bounds.lo)}, {"hi", vec_json(s.bounds.hi)}};
  j["arrays"] = json::array();
  for (const auto& a : s.arrays) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back(json::array({a.rotation(r, 0), a.rotation(r, 1), a.rotation(r, 2)}));
    j["arrays"].push_back({{"side", a.side},
                           {"element_spacing", a.element_spacing},
                           {"wavelength", a.wavelength},
                           {"origin", vec_json(a.origin)},
                           {"rotation", rot}});
  }
  j["reflectors"] = json::array();
  for (const auto& r : s.reflectors) {
    j["reflectors"].push_back({{"position", vec_json(r.position)},
                               {"coefficient", json::array({r.coefficient.real(), r.coefficient.imag()})}});
  }
  return j;
}

spectrum::Scene scene_from(const json& j) {
  spectrum::Scene s;
  s.scene_id = j.at("scene_id").get<std::string>();
  s.wavelength = j.at("wavelength").get<double>();
  s.bounds = {vec_from(j.at("bounds").at("lo")), vec_from(j.at("bounds").at("hi"))};
  for (const auto& a : j.at("arrays")) {
    spectrum::ArrayGeometry g;
    g.side = a.at("side").get<int>();
    g.element_spacing = a.at("element_spacing").get<double>();
    g.wavelength = a.at("wavelength").get<double>();
    g.origin = vec_from(a.at("origin"));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) g.rotation(r, c) = a.at("rotation").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    }
    s.arrays.push_back(g);
  }
  for (const auto& r : j.at("reflectors")) {
    const auto& c = r.at("coefficient");
    s.reflectors.push_back({vec_from(r.at("position")), Complex(c.at(0).get<double>(), c.at(1).get<double>())});
  }
  s.validate();
  return s;
}

}  // namespace

std::string scene_to_json(const spectrum::Scene& scene) { return scene_json(scene).dump(); }

namespace {

void put_float(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v));
  out.append(buf, res.ptr);
}

void put_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

std::vector<std::string> sample_to_json_lines(const data::Sample& sample, const spectrum::Scene& scene) {
  require(sample.spectra.size() == scene.arrays.size(), "sample_to_json_lines: one spectrum per array is required");
  // Written by hand: values are float-representable, so the shortest float
  // text round-trips exactly and keeps the files compact.
  std::vector<std::string> lines;
  for (std::size_t g = 0; g < sample.spectra.size(); ++g) {
    const auto& a = scene.arrays[g];
    std::string out = "{\"scene_id\":" + json(sample.scene_id).dump() + ",\"sample_index\":" +
                      std::to_string(sample.index) + ",\"array_index\":" + std::to_string(g) + ",\"origin\":[";
    for (int c = 0; c < 3; ++c) {
      if (c) out += ',';
      put_double(out, a.origin(c));
    }
    out += "],\"rotation\":[";
    for (int k = 0; k < 9; ++k) {
      if (k) out += ',';
      put_double(out, a.rotation(k / 3, k % 3));
    }
    out += "],\"spectrum\":[";
    const Matrix& m = sample.spectra[g].magnitudes;
    for (Index k = 0; k < m.size(); ++k) {
      if (k) out += ',';
      put_float(out, m.data()[k]);
    }
    out += "],\"tx_pos\":";
    if (sample.tx) {
      out += '[';
      for (int c = 0; c < 3; ++c) {
        if (c) out += ',';
        put_float(out, (*sample.tx)(c));
      }
      out += ']';
    } else {
      out += "null";
    }
    out += '}';
    lines.push_back(std::move(out));
  }
  return lines;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("write_dataset: cannot create '" + dir + "': " + ec.message());
  json index;
  index["format"] = "rfrp-jsonl-1";
  index["pretrain"] = json::array();
  index["test"] = json::array();
  auto write_group = [&](const std::vector<data::SceneData>& group, const char* key) {
    for (const auto& s : group) {
      index[key].push_back(scene_json(s.scene));
      const std::string path = dir + "/" + s.scene.scene_id + ".jsonl";
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("write_dataset: cannot write '" + path + "'");
      for (const auto& sample : s.samples) {
        for (const auto& line : sample_to_json_lines(sample, s.scene)) out << line << '\n';
      }
      if (!out) throw std::runtime_error("write_dataset: write failed for '" + path + "'");
    }
  };
  write_group(dataset.pretrain, "pretrain");
  write_group(dataset.test, "test");
  std::ofstream out(dir + "/scenes.json", std::ios::binary);
  if (!out) throw std::runtime_error("write_dataset: cannot write '" + dir + "/scenes.json'");
  out << index.dump(2) << '\n';
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream in(dir + "/scenes.json");
  if (!in) throw std::runtime_error("read_dataset: missing '" + dir + "/scenes.json'");
  Dataset d;
  try {
    const json index = json::parse(in);
    auto read_group = [&](const char* key, std::vector<data::SceneData>& group) {
      for (const auto& sj : index.at(key)) {
        data::SceneData sd;
        sd.scene = scene_from(sj);
        const std::string path = dir + "/" + sd.scene.scene_id + ".jsonl";
        std::ifstream lines(path);
        if (!lines) throw std::runtime_error("read_dataset: missing '" + path + "'");
        std::string line;
        while (std::getline(lines, line)) {
          if (line.empty()) continue;
          const json r = json::parse(line);
          const int index = r.at("sample_index").get<int>();
          const auto g = r.at("array_index").get<std::size_t>();
          if (g == 0) {
            data::Sample s;
            s.scene_id = r.at("scene_id").get<std::string>();
            s.index = index;
            if (!r.at("tx_pos").is_null()) s.tx = vec_from(r.at("tx_pos")).unaryExpr(&to_float);
            sd.samples.push_back(std::move(s));
          }
          require(!sd.samples.empty() && sd.samples.back().index == index && sd.samples.back().spectra.size() == g,
                  "read_dataset: records of '" + path + "' are out of order");
          const auto& spec = r.at("spectrum");
          require(spec.size() == kSpectrumSize, "read_dataset: spectrum must have 324 values");
          spectrum::SpatialSpectrum m;
          m.array_index = static_cast<int>(g);
          for (Index k = 0; k < kSpectrumSize; ++k) m.magnitudes.data()[k] = to_float(spec[static_cast<std::size_t>(k)].get<double>());
          sd.samples.back().spectra.push_back(std::move(m));
        }
        for (const auto& s : sd.samples) {
          require(s.spectra.size() == sd.scene.arrays.size(), "read_dataset: sample " + std::to_string(s.index) +
                                                                  " of '" + path + "' is missing arrays");
        }
        group.push_back(std::move(sd));
      }
    };
    read_group("pretrain", d.pretrain);
    read_group("test", d.test);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("read_dataset: malformed file: ") + e.what());
  }
  return d;
}

}  // namespace rfrp::harness
