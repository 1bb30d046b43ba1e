#include "rfrp/rfnerf.hpp"

#include <cmath>

namespace rfrp::rfnerf {

void FieldConfig::validate() const {
  require(pe_dim >= 2 && pe_dim % 2 == 0, "FieldConfig: pe_dim must be even and >= 2");
  require(attenuation_layers >= 1 && attenuation_width >= 1, "FieldConfig: attenuation net needs >= 1 layer");
  require(feature_dim >= 1 && radiance_hidden >= 1 && radiance_hidden2 >= 1, "FieldConfig: widths must be >= 1");
  require(latent_dim >= 1, "FieldConfig: latent_dim must be >= 1");
  require(samples >= 2, "FieldConfig: at least two ray samples are required");
}

FieldParams FieldParams::init(const FieldConfig& config, const spectrum::Box& bounds, Rng& rng,
                              const std::string& prefix) {
  config.validate();
  require(((bounds.hi - bounds.lo).array() > 0.0).all(), "FieldParams: bounds must have positive extent");
  const Index pe = config.point_encoding();
  FieldParams p;
  p.config = config;
  p.bounds = bounds;
  Index in = pe;
  for (int l = 0; l < config.attenuation_layers; ++l) {
    p.attenuation.emplace_back(prefix + ".atten" + std::to_string(l), in, config.attenuation_width, rng);
    in = config.attenuation_width;
  }
  p.attenuation_out = nn::Dense(prefix + ".atten_out", in, 2 + config.feature_dim, rng);

  // Split first radiance layer, initialized as one layer over the full input.
  const Index point_in = config.feature_dim + pe;
  const Index fan_in = point_in + pe;
  p.radiance_point.weight = ad::Parameter(prefix + ".rad_point.weight",
                                          nn::uniform_init(point_in, config.radiance_hidden, fan_in, rng));
  p.radiance_point.bias =
      ad::Parameter(prefix + ".rad_point.bias", nn::uniform_init(1, config.radiance_hidden, fan_in, rng));
  p.radiance_cond =
      ad::Parameter(prefix + ".rad_cond.weight", nn::uniform_init(pe, config.radiance_hidden, fan_in, rng));
  p.radiance_hidden = nn::Dense(prefix + ".rad_hidden", config.radiance_hidden, config.radiance_hidden2, rng);
  p.radiance_out = nn::Dense(prefix + ".rad_out", config.radiance_hidden2, 2, rng);
  p.latent_proj = nn::Dense(prefix + ".latent_proj", config.latent_dim, pe, rng);
  return p;
}

std::size_t FieldParams::parameter_count() {
  std::size_t n = 0;
  visit([&n](ad::Parameter& p) { n += static_cast<std::size_t>(p.size()); });
  return n;
}

void FieldParams::zero() {
  visit([](ad::Parameter& p) { p.value.setZero(); });
}

void Conditioning::validate() const {
  require(tx_position.has_value() != latent.has_value(), "Conditioning: exactly one of tx_position, latent");
  if (tx_position) require(tx_position->allFinite(), "Conditioning: non-finite tx position");
  if (latent) require(latent->allFinite(), "Conditioning: non-finite latent");
}

void RayConfig::validate() const {
  require(max_range > 0.0, "RayConfig: max_range must be positive");
  require(samples >= 2, "RayConfig: at least two samples are required");
  require(direction.allFinite() && direction.norm() > 0.0, "RayConfig: direction must be non-zero");
  require(origin.allFinite(), "RayConfig: non-finite origin");
}

RowVector fourier_encode(double x, int dim) {
  require(dim >= 2 && dim % 2 == 0, "fourier_encode: dimension must be even");
  RowVector out(dim);
  for (int k = 0; k < dim / 2; ++k) {
    const double angle = std::ldexp(kPi * x, k);
    out(2 * k) = std::sin(angle);
    out(2 * k + 1) = std::cos(angle);
  }
  return out;
}

RowVector fourier_encode(const Vector& x, int dim) {
  RowVector out(x.size() * dim);
  for (Index c = 0; c < x.size(); ++c) out.segment(c * dim, dim) = fourier_encode(x(c), dim);
  return out;
}

Matrix fourier_encode_rows(const Matrix& x, int dim) {
  Matrix out(x.rows(), x.cols() * dim);
  for (Index r = 0; r < x.rows(); ++r) out.row(r) = fourier_encode(Vector(x.row(r).transpose()), dim);
  return out;
}

Vec3 normalize_point(const spectrum::Box& bounds, const Vec3& p) {
  return (2.0 * (p - bounds.lo).array() / (bounds.hi - bounds.lo).array() - 1.0).matrix();
}

RayBundle make_bundle(const FieldParams& params, const std::vector<RayConfig>& rays) {
  require(!rays.empty(), "make_bundle: no rays");
  const int n = rays.front().samples;
  const double range = rays.front().max_range;
  for (const auto& r : rays) {
    r.validate();
    require(r.samples == n && r.max_range == range, "make_bundle: rays must share samples and range");
  }
  const int pe = params.config.pe_dim;
  RayBundle b;
  b.rays = static_cast<Index>(rays.size());
  b.samples = n;
  b.step = range / n;
  const Index m = b.rays * n;
  b.point_codes.resize(m, 3 * pe);
  b.direction_codes.resize(m, 3 * pe);
  for (Index r = 0; r < b.rays; ++r) {
    const Vec3 omega = rays[static_cast<std::size_t>(r)].direction.normalized();
    const RowVector dir_code = fourier_encode(Vector(-omega), pe);
    for (int s = 0; s < n; ++s) {
      const Vec3 p = rays[static_cast<std::size_t>(r)].origin + (s + 0.5) * b.step * omega;
      b.point_codes.row(r * n + s) = fourier_encode(Vector(normalize_point(params.bounds, p)), pe);
      b.direction_codes.row(r * n + s) = dir_code;
    }
  }
  return b;
}

std::vector<RayConfig> spectrum_rays(const Vec3& rx, const Mat3& rotation, double max_range, int samples) {
  std::vector<RayConfig> rays;
  rays.reserve(kSpectrumSize);
  for (int i = 0; i < kAzimuthBins; ++i) {
    for (int j = 0; j < kElevationBins; ++j) {
      rays.push_back({rx, rotation * spectrum::unit_vector(spectrum::bin_center(i, j)), max_range, samples});
    }
  }
  return rays;
}

RayBundle spectrum_bundle(const FieldParams& params, const Vec3& rx, const Mat3& rotation,
                          std::optional<double> max_range, std::optional<int> samples) {
  return make_bundle(params, spectrum_rays(rx, rotation, max_range.value_or(params.bounds.diagonal()),
                                           samples.value_or(params.config.samples)));
}

AttenuationPass attenuation_pass(ad::Tape& tape, FieldParams& params, const RayBundle& bundle) {
  ad::Var h = tape.constant(bundle.point_codes);
  for (auto& layer : params.attenuation) h = ad::relu(layer(tape, h));
  const ad::Var out = params.attenuation_out(tape, h);
  const ad::Var raw_re = ad::slice_cols(out, 0, 1);
  const ad::Var raw_im = ad::slice_cols(out, 1, 1);
  const ad::Var feature = ad::slice_cols(out, 2, params.config.feature_dim);

  AttenuationPass pass;
  pass.delta = ad::concat_cols({ad::scale(ad::softplus(raw_re), -1.0), raw_im});
  pass.transmittance =
      ad::complex_exp(ad::scale(ad::segment_exclusive_cumsum_rows(pass.delta, bundle.samples), bundle.step));
  pass.point_hidden = params.radiance_point(tape, ad::concat_cols({feature, tape.constant(bundle.direction_codes)}));
  return pass;
}

ad::Var latent_condition(ad::Tape& tape, FieldParams& params, ad::Var latent) {
  require(latent.cols() == params.config.latent_dim, "latent_condition: latent width mismatch");
  return params.latent_proj(tape, latent);
}

ad::Var tx_condition(ad::Tape& tape, const FieldParams& params, const Vec3& tx) {
  return tape.constant(Matrix(fourier_encode(Vector(normalize_point(params.bounds, tx)), params.config.pe_dim)));
}

ad::Var condition(ad::Tape& tape, FieldParams& params, const Conditioning& conditioning) {
  conditioning.validate();
  if (conditioning.tx_position) return tx_condition(tape, params, *conditioning.tx_position);
  return latent_condition(tape, params, tape.constant(Matrix(conditioning.latent->transpose())));
}

ad::Var radiance(ad::Tape& tape, FieldParams& params, const AttenuationPass& pass, ad::Var condition_row) {
  require(condition_row.rows() == 1 && condition_row.cols() == params.config.point_encoding(),
          "radiance: conditioning must be one row of the encoding width");
  const ad::Var c = ad::matmul(condition_row, tape.leaf(params.radiance_cond));
  const ad::Var h1 = ad::relu(ad::add_row(pass.point_hidden, c));
  const ad::Var h2 = ad::relu(params.radiance_hidden(tape, h1));
  return params.radiance_out(tape, h2);
}

ad::Var march(const AttenuationPass& pass, ad::Var radiance, const RayBundle& bundle) {
  const ad::Var contrib = ad::complex_mul(pass.transmittance, radiance);
  return ad::scale(ad::segment_sum_rows(contrib, bundle.samples), bundle.step);
}

ad::Var render(ad::Tape& tape, FieldParams& params, const RayBundle& bundle, const AttenuationPass& pass,
               ad::Var condition_row) {
  require(bundle.rays == kSpectrumSize, "render: bundle must hold the 324 spectrum rays");
  const ad::Var r = march(pass, radiance(tape, params, pass, condition_row), bundle);
  return ad::reshape(ad::complex_abs(r), kAzimuthBins, kElevationBins);
}

FieldSample query_field(FieldParams& params, const Vec3& point, const Vec3& direction,
                        const Conditioning& conditioning) {
  require(point.allFinite() && direction.allFinite(), "query_field: non-finite input");
  const int pe = params.config.pe_dim;
  RayBundle b;
  b.rays = 1;
  b.samples = 1;
  b.step = 1.0;
  b.point_codes = fourier_encode(Vector(normalize_point(params.bounds, point)), pe);
  b.direction_codes = fourier_encode(Vector(direction), pe);
  ad::Tape tape;
  const AttenuationPass pass = attenuation_pass(tape, params, b);
  const Matrix s = radiance(tape, params, pass, condition(tape, params, conditioning)).value();
  const Matrix& d = pass.delta.value();
  return {{d(0, 0), d(0, 1)}, {s(0, 0), s(0, 1)}};
}

Complex ray_march(FieldParams& params, const RayConfig& ray, const Conditioning& conditioning) {
  const RayBundle b = make_bundle(params, {ray});
  ad::Tape tape;
  const AttenuationPass pass = attenuation_pass(tape, params, b);
  const Matrix r = march(pass, radiance(tape, params, pass, condition(tape, params, conditioning)), b).value();
  return {r(0, 0), r(0, 1)};
}

Complex integrate_ray(const Matrix& delta, const Matrix& radiance, double step) {
  require(delta.cols() == 2 && radiance.cols() == 2 && delta.rows() == radiance.rows() && delta.rows() >= 1,
          "integrate_ray: expected matching n x 2 inputs");
  Complex log_t{0.0, 0.0};
  Complex total{0.0, 0.0};
  for (Index m = 0; m < delta.rows(); ++m) {
    total += std::exp(log_t * step) * Complex(radiance(m, 0), radiance(m, 1)) * step;
    log_t += Complex(delta(m, 0), delta(m, 1));
  }
  return total;
}

spectrum::SpatialSpectrum render_spectrum(FieldParams& params, const Vec3& rx, const Mat3& rotation,
                                          const Conditioning& conditioning, std::optional<double> max_range,
                                          std::optional<int> samples, int array_index) {
  const RayBundle b = spectrum_bundle(params, rx, rotation, max_range, samples);
  ad::Tape tape;
  const AttenuationPass pass = attenuation_pass(tape, params, b);
  spectrum::SpatialSpectrum out;
  out.magnitudes = render(tape, params, b, pass, condition(tape, params, conditioning)).value();
  out.array_index = array_index;
  return out;
}

}  // namespace rfrp::rfnerf
