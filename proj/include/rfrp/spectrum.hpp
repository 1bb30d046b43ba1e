#pragma once

// Array geometry, multipath measurement synthesis, beamformed spatial spectra
// and the patch/token view of a spectrum consumed by the encoder.

#include "rfrp/rng.hpp"
#include "rfrp/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace rfrp::spectrum {

/// Arrival direction in an array's local frame. Elevation is measured from
/// the array plane toward its normal (local +z).
struct Direction {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

struct BinIndex {
  int azimuth = 0;
  int elevation = 0;
  friend bool operator==(const BinIndex&, const BinIndex&) = default;
};

/// Bin containing a direction; throws when outside [0,360) x [0,90).
BinIndex bin_of(const Direction& direction);
/// Bin center (10i + 5, 10j + 5) degrees.
Direction bin_center(int azimuth_bin, int elevation_bin);
/// Unit vector (cos e cos a, cos e sin a, sin e) in the local frame.
Vec3 unit_vector(const Direction& direction);
/// Inverse of unit_vector; azimuth wrapped into [0, 360).
Direction direction_of(const Vec3& local);

struct ArrayGeometry {
  int side = 4;                  // sqrt(K)
  double element_spacing = 0.5;  // in wavelengths
  Vec3 origin = Vec3::Zero();    // position of element E_0, meters
  Mat3 rotation = Mat3::Identity();  // local -> global
  double wavelength = 0.125;

  int element_count() const { return side * side; }
  /// Offset of element k from E_0 in the local frame; k = a * side + b sits
  /// at (a, b, 0) * spacing.
  Vec3 element_offset(int k) const;
  Vec3 element_position(int k) const { return origin + rotation * element_offset(k); }
  Vec3 to_local(const Vec3& global_direction) const { return rotation.transpose() * global_direction; }
  void validate() const;
};

struct Reflector {
  Vec3 position = Vec3::Zero();
  Complex coefficient{0.0, 0.0};
};

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  bool contains(const Vec3& p) const;
  double diagonal() const { return (hi - lo).norm(); }
  Vec3 center() const { return 0.5 * (lo + hi); }
};

struct Scene {
  std::string scene_id;
  std::vector<ArrayGeometry> arrays;
  std::vector<Reflector> reflectors;
  Box bounds;
  double wavelength = 0.125;

  void validate() const;
};

/// Per-element signal ratios s_k / s_0.
struct RelativeSignal {
  ComplexVector values;
};

/// 36 x 9 magnitudes; row = azimuth bin, column = elevation bin.
struct SpatialSpectrum {
  Matrix magnitudes = Matrix::Zero(kAzimuthBins, kElevationBins);
  int array_index = 0;
};

/// Unit-modulus weights w_k = exp(J (2 pi / lambda) e_k . u) for a local unit
/// vector u pointing from the array toward the candidate source direction.
ComplexVector steering_weights(const ArrayGeometry& geometry, const Vec3& local_direction);
ComplexVector steering_weights(const ArrayGeometry& geometry, const Direction& direction);

/// N x K steering matrix over the 324 bin centers, row n = 9 * azimuth + elevation.
Eigen::MatrixXcd steering_matrix(const ArrayGeometry& geometry);

/// Complex received signal per element from line of sight plus one bounce off
/// every reflector, normalized by element 0.
RelativeSignal synthesize_measurement(const Scene& scene, const Vec3& tx, int array_index);

/// |(1/K) W s + Z| with Z circular complex Gaussian of the given std.
SpatialSpectrum compute_spectrum(const ArrayGeometry& geometry, const RelativeSignal& signal, double noise_std,
                                 Rng& rng, int array_index = 0);

/// Bin center of the largest magnitude; ties go to the lowest azimuth, then
/// the lowest elevation index.
Direction argmax_direction(const SpatialSpectrum& spectrum);

/// True direction of tx as seen by an array, in that array's local frame.
Direction true_direction(const ArrayGeometry& geometry, const Vec3& tx);

// ---- patch view ----

/// 36 patches of 3 x 3, patch p covering rows 3*(p/3).. and columns 3*(p%3)..
std::vector<Matrix> patchify(const Matrix& magnitudes);
Matrix unpatchify(const std::vector<Matrix>& patches);
/// 36 x 9 matrix whose row p is patch p flattened row-major.
Matrix patch_rows(const Matrix& magnitudes);
Matrix unpatch_rows(const Matrix& rows);

/// token_p = token_weights (d x 9) * flatten(patch_p) + token_bias; returns 36 x d.
Matrix tokenize(const std::vector<Matrix>& patches, const Matrix& token_weights, const Vector& token_bias);

}  // namespace rfrp::spectrum
