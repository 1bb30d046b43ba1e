#pragma once

// Scene-specific radiance-field decoder. Each voxel attenuates what passes
// through it (delta) and re-emits a direction-dependent signal (S); the
// received signal along a direction is the transmittance-weighted sum of the
// emissions, and 324 such integrals make one spectrum.

#include "rfrp/autograd.hpp"
#include "rfrp/nn.hpp"
#include "rfrp/spectrum.hpp"

#include <optional>
#include <vector>

namespace rfrp::rfnerf {

struct FieldConfig {
  int pe_dim = 32;  // Fourier features per coordinate component
  int attenuation_layers = 4;
  int attenuation_width = 64;
  int feature_dim = 64;
  int radiance_hidden = 64;
  int radiance_hidden2 = 32;
  int latent_dim = 32;
  int samples = 64;  // ray samples per direction

  int point_encoding() const { return 3 * pe_dim; }
  void validate() const;
};

struct FieldParams {
  FieldConfig config;
  spectrum::Box bounds;  // coordinates are normalized to [-1, 1] over the box
  std::vector<nn::Dense> attenuation;  // PE(P) -> width, ReLU after each
  nn::Dense attenuation_out;           // width -> 2 raw delta values + feature
  // First radiance layer over [feature, PE(dir), conditioning], stored split so
  // the per-point part is computed once and shared by every conditioning.
  nn::Dense radiance_point;  // feature + PE(dir) -> hidden, with bias
  ad::Parameter radiance_cond;  // conditioning width -> hidden, no bias
  nn::Dense radiance_hidden;
  nn::Dense radiance_out;  // -> (Re S, Im S)
  nn::Dense latent_proj;   // latent z -> conditioning width

  static FieldParams init(const FieldConfig& config, const spectrum::Box& bounds, Rng& rng,
                          const std::string& prefix = "field");

  template <class F>
  void visit(F&& f) {
    for (auto& d : attenuation) d.visit(f);
    attenuation_out.visit(f);
    radiance_point.visit(f);
    f(radiance_cond);
    radiance_hidden.visit(f);
    radiance_out.visit(f);
    latent_proj.visit(f);
  }
  std::size_t parameter_count();
  /// Zero every weight and bias.
  void zero();
};

/// Either the transmitter position (Fourier encoded) or a latent code z.
struct Conditioning {
  std::optional<Vec3> tx_position;
  std::optional<Vector> latent;

  static Conditioning from_tx(const Vec3& tx) { return {tx, std::nullopt}; }
  static Conditioning from_latent(const Vector& z) { return {std::nullopt, z}; }
  void validate() const;
};

struct RayConfig {
  Vec3 origin = Vec3::Zero();     // P_RX
  Vec3 direction = Vec3::UnitX(); // omega, global frame
  double max_range = 1.0;         // D
  int samples = 64;

  void validate() const;
};

struct FieldSample {
  Complex delta;     // log attenuation, Re <= 0
  Complex radiance;  // S
};

/// Per component [sin(2^k pi x), cos(2^k pi x)], k = 0 .. dim/2 - 1.
RowVector fourier_encode(double x, int dim);
RowVector fourier_encode(const Vector& x, int dim);
/// Row-wise encoding of an m x c matrix -> m x (c * dim).
Matrix fourier_encode_rows(const Matrix& x, int dim);

/// Maps the bounds box onto [-1, 1]^3.
Vec3 normalize_point(const spectrum::Box& bounds, const Vec3& p);

// ---- graph form ----

/// Points of every ray in a spectrum, flattened ray-major: row r * n + m is
/// sample m of ray r.
struct RayBundle {
  Index rays = 0;
  Index samples = 0;
  double step = 0.0;     // dr = D / n
  Matrix point_codes;    // (rays * n) x 3 pe_dim, PE(normalized P)
  Matrix direction_codes;  // (rays * n) x 3 pe_dim, PE(-omega)
};

RayBundle make_bundle(const FieldParams& params, const std::vector<RayConfig>& rays);
/// The 324 bin-center rays of an array, in spectrum order.
std::vector<RayConfig> spectrum_rays(const Vec3& rx, const Mat3& rotation, double max_range, int samples);
RayBundle spectrum_bundle(const FieldParams& params, const Vec3& rx, const Mat3& rotation,
                          std::optional<double> max_range = std::nullopt, std::optional<int> samples = std::nullopt);

struct AttenuationPass {
  ad::Var delta;          // m x 2 log attenuation
  ad::Var transmittance;  // m x 2, exclusive along each ray
  ad::Var point_hidden;   // m x hidden, per-point part of the first radiance layer
};

/// Everything that depends only on the sample points; computed once per bundle.
AttenuationPass attenuation_pass(ad::Tape& tape, FieldParams& params, const RayBundle& bundle);
/// Conditioning row (1 x 3 pe_dim) from a latent code row (1 x latent_dim).
ad::Var latent_condition(ad::Tape& tape, FieldParams& params, ad::Var latent);
ad::Var tx_condition(ad::Tape& tape, const FieldParams& params, const Vec3& tx);
ad::Var condition(ad::Tape& tape, FieldParams& params, const Conditioning& conditioning);
/// S at every bundle point for one conditioning row; m x 2.
ad::Var radiance(ad::Tape& tape, FieldParams& params, const AttenuationPass& pass, ad::Var condition_row);
/// R per ray; rays x 2.
ad::Var march(const AttenuationPass& pass, ad::Var radiance, const RayBundle& bundle);
/// Magnitudes of a full spectrum bundle, 36 x 9.
ad::Var render(ad::Tape& tape, FieldParams& params, const RayBundle& bundle, const AttenuationPass& pass,
               ad::Var condition_row);

// ---- plain form ----

FieldSample query_field(FieldParams& params, const Vec3& point, const Vec3& direction,
                        const Conditioning& conditioning);
/// Midpoint quadrature of the received signal along one ray.
Complex ray_march(FieldParams& params, const RayConfig& ray, const Conditioning& conditioning);
/// Same quadrature from precomputed per-sample values (n x 2 each).
Complex integrate_ray(const Matrix& delta, const Matrix& radiance, double step);
spectrum::SpatialSpectrum render_spectrum(FieldParams& params, const Vec3& rx, const Mat3& rotation,
                                          const Conditioning& conditioning,
                                          std::optional<double> max_range = std::nullopt,
                                          std::optional<int> samples = std::nullopt, int array_index = 0);

}  // namespace rfrp::rfnerf
