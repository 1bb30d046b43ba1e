#include "rfrp/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rfrp::spectrum {

namespace {
constexpr double kDeg = kPi / 180.0;
}

BinIndex bin_of(const Direction& direction) {
  if (!(direction.azimuth_deg >= 0.0 && direction.azimuth_deg < 360.0) ||
      !(direction.elevation_deg >= 0.0 && direction.elevation_deg < 90.0)) {
    std::ostringstream msg;
    msg << "direction (" << direction.azimuth_deg << ", " << direction.elevation_deg
        << ") outside [0,360) x [0,90)";
    throw InvalidArgument(msg.str());
  }
  return {static_cast<int>(std::floor(direction.azimuth_deg / kBinWidthDeg)),
          static_cast<int>(std::floor(direction.elevation_deg / kBinWidthDeg))};
}

Direction bin_center(int azimuth_bin, int elevation_bin) {
  require(azimuth_bin >= 0 && azimuth_bin < kAzimuthBins && elevation_bin >= 0 && elevation_bin < kElevationBins,
          "bin_center: bin index out of range");
  return {kBinWidthDeg * azimuth_bin + kBinWidthDeg / 2, kBinWidthDeg * elevation_bin + kBinWidthDeg / 2};
}

Vec3 unit_vector(const Direction& direction) {
  const double az = direction.azimuth_deg * kDeg;
  const double el = direction.elevation_deg * kDeg;
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

Direction direction_of(const Vec3& local) {
  const Vec3 u = local.normalized();
  double az = std::atan2(u.y(), u.x()) / kDeg;
  if (az < 0.0) az += 360.0;
  if (az >= 360.0) az -= 360.0;
  const double el = std::asin(std::clamp(u.z(), -1.0, 1.0)) / kDeg;
  return {az, el};
}

Vec3 ArrayGeometry::element_offset(int k) const {
  const int a = k / side;
  const int b = k % side;
  const double step = element_spacing * wavelength;
  return {a * step, b * step, 0.0};
}

void ArrayGeometry::validate() const {
  require(side >= 2, "ArrayGeometry: side must be >= 2");
  require(wavelength > 0.0 && element_spacing > 0.0, "ArrayGeometry: wavelength and spacing must be positive");
  require((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9,
          "ArrayGeometry: rotation is not orthonormal");
}

bool Box::contains(const Vec3& p) const {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

void Scene::validate() const {
  require(arrays.size() >= 2, "Scene '" + scene_id + "': at least two arrays are required");
  for (const auto& a : arrays) {
    a.validate();
    require(bounds.contains(a.origin), "Scene '" + scene_id + "': array origin outside bounds");
  }
  for (const auto& r : reflectors) {
    require(std::abs(r.coefficient) <= 1.0 + 1e-12, "Scene '" + scene_id + "': reflector coefficient exceeds 1");
    require(bounds.contains(r.position), "Scene '" + scene_id + "': reflector outside bounds");
  }
}

ComplexVector steering_weights(const ArrayGeometry& geometry, const Vec3& local_direction) {
  const int k_count = geometry.element_count();
  ComplexVector w(k_count);
  const double wavenumber = 2.0 * kPi / geometry.wavelength;
  for (int k = 0; k < k_count; ++k) {
    const double phase = wavenumber * geometry.element_offset(k).dot(local_direction);
    w(k) = std::polar(1.0, phase);
  }
  return w;
}

ComplexVector steering_weights(const ArrayGeometry& geometry, const Direction& direction) {
  return steering_weights(geometry, unit_vector(direction));
}

Eigen::MatrixXcd steering_matrix(const ArrayGeometry& geometry) {
  Eigen::MatrixXcd w(kSpectrumSize, geometry.element_count());
  for (int i = 0; i < kAzimuthBins; ++i) {
    for (int j = 0; j < kElevationBins; ++j) {
      w.row(i * kElevationBins + j) = steering_weights(geometry, bin_center(i, j)).transpose();
    }
  }
  return w;
}

RelativeSignal synthesize_measurement(const Scene& scene, const Vec3& tx, int array_index) {
  require(array_index >= 0 && array_index < static_cast<int>(scene.arrays.size()),
          "synthesize_measurement: array index out of range");
  require(scene.bounds.contains(tx), "synthesize_measurement: tx outside scene bounds");
  const ArrayGeometry& geometry = scene.arrays[static_cast<std::size_t>(array_index)];
  const int k_count = geometry.element_count();
  const double wavenumber = 2.0 * kPi / geometry.wavelength;
  auto path = [wavenumber](double length) { return std::polar(1.0 / length, wavenumber * length); };

  ComplexVector s(k_count);
  for (int k = 0; k < k_count; ++k) {
    const Vec3 element = geometry.element_position(k);
    const double los = (tx - element).norm();
    if (los < 0.1) throw DegenerateInput("synthesize_measurement: tx within 0.1 m of an array element");
    Complex total = path(los);
    for (const Reflector& r : scene.reflectors) {
      const double bounce = (tx - r.position).norm() + (r.position - element).norm();
      total += r.coefficient * path(bounce);
    }
    s(k) = total;
  }
  RelativeSignal out;
  out.values = s / s(0);
  out.values(0) = Complex(1.0, 0.0);
  return out;
}

SpatialSpectrum compute_spectrum(const ArrayGeometry& geometry, const RelativeSignal& signal, double noise_std,
                                 Rng& rng, int array_index) {
  require(signal.values.size() == geometry.element_count(), "compute_spectrum: signal length does not match K");
  require(noise_std >= 0.0, "compute_spectrum: noise_std must be non-negative");
  const Eigen::MatrixXcd w = steering_matrix(geometry);
  Eigen::VectorXcd beam = (w * signal.values) / static_cast<double>(geometry.element_count());
  if (noise_std > 0.0) {
    const double component = noise_std / std::sqrt(2.0);
    for (Index n = 0; n < beam.size(); ++n) {
      const double re = rng.normal();
      const double im = rng.normal();
      beam(n) += Complex(component * re, component * im);
    }
  }
  SpatialSpectrum out;
  out.array_index = array_index;
  for (int i = 0; i < kAzimuthBins; ++i) {
    for (int j = 0; j < kElevationBins; ++j) out.magnitudes(i, j) = std::abs(beam(i * kElevationBins + j));
  }
  return out;
}

Direction argmax_direction(const SpatialSpectrum& spectrum) {
  const Matrix& m = spectrum.magnitudes;
  require(m.size() > 0, "argmax_direction: empty spectrum");
  int best_i = 0;
  int best_j = 0;
  // Strict comparison in row-major scan keeps the lowest (azimuth, elevation).
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (m(i, j) > m(best_i, best_j)) {
        best_i = i;
        best_j = j;
      }
    }
  }
  return bin_center(best_i, best_j);
}

Direction true_direction(const ArrayGeometry& geometry, const Vec3& tx) {
  return direction_of(geometry.to_local(tx - geometry.origin));
}

std::vector<Matrix> patchify(const Matrix& magnitudes) {
  require(magnitudes.rows() == kAzimuthBins && magnitudes.cols() == kElevationBins,
          "patchify: expected a 36 x 9 spectrum");
  std::vector<Matrix> patches;
  patches.reserve(kPatchesPerArray);
  const int patch_cols = kElevationBins / kPatchSide;
  for (int p = 0; p < kPatchesPerArray; ++p) {
    const int pr = p / patch_cols;
    const int pc = p % patch_cols;
    patches.emplace_back(magnitudes.block(pr * kPatchSide, pc * kPatchSide, kPatchSide, kPatchSide));
  }
  return patches;
}

Matrix unpatchify(const std::vector<Matrix>& patches) {
  require(patches.size() == kPatchesPerArray, "unpatchify: expected 36 patches");
  Matrix out(kAzimuthBins, kElevationBins);
  const int patch_cols = kElevationBins / kPatchSide;
  for (int p = 0; p < kPatchesPerArray; ++p) {
    const Matrix& patch = patches[static_cast<std::size_t>(p)];
    require(patch.rows() == kPatchSide && patch.cols() == kPatchSide, "unpatchify: patches must be 3 x 3");
    out.block((p / patch_cols) * kPatchSide, (p % patch_cols) * kPatchSide, kPatchSide, kPatchSide) = patch;
  }
  return out;
}

Matrix patch_rows(const Matrix& magnitudes) {
  const auto patches = patchify(magnitudes);
  Matrix rows(kPatchesPerArray, kPatchValues);
  for (int p = 0; p < kPatchesPerArray; ++p) {
    rows.row(p) = Eigen::Map<const RowVector>(patches[static_cast<std::size_t>(p)].data(), kPatchValues);
  }
  return rows;
}

Matrix unpatch_rows(const Matrix& rows) {
  require(rows.rows() == kPatchesPerArray && rows.cols() == kPatchValues, "unpatch_rows: expected 36 x 9");
  std::vector<Matrix> patches;
  patches.reserve(kPatchesPerArray);
  for (int p = 0; p < kPatchesPerArray; ++p) {
    patches.emplace_back(Eigen::Map<const Matrix>(rows.row(p).data(), kPatchSide, kPatchSide));
  }
  return unpatchify(patches);
}

Matrix tokenize(const std::vector<Matrix>& patches, const Matrix& token_weights, const Vector& token_bias) {
  require(patches.size() == kPatchesPerArray, "tokenize: expected 36 patches");
  require(token_weights.cols() == kPatchValues, "tokenize: token weights must be d x 9");
  require(token_weights.rows() >= kPatchValues, "tokenize: embedding dimension must be >= 9");
  require(token_bias.size() == token_weights.rows(), "tokenize: bias length must equal d");
  Matrix tokens(kPatchesPerArray, token_weights.rows());
  for (int p = 0; p < kPatchesPerArray; ++p) {
    const Matrix& patch = patches[static_cast<std::size_t>(p)];
    require(patch.rows() == kPatchSide && patch.cols() == kPatchSide, "tokenize: patches must be 3 x 3");
    const Eigen::Map<const Vector> flat(patch.data(), kPatchValues);
    tokens.row(p) = (token_weights * flat + token_bias).transpose();
  }
  return tokens;
}

}  // namespace rfrp::spectrum
