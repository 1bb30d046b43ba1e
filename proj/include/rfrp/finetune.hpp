#pragma once

// Supervised position regression on top of the encoder, and the classical
// direction-intersection baseline.

#include "rfrp/data.hpp"
#include "rfrp/encoder.hpp"
#include "rfrp/optim.hpp"

#include <optional>
#include <vector>

namespace rfrp::finetune {

/// P = W concat(f_p^1 .. f_p^G) + b.
struct FineTuneHead {
  ad::Parameter weight;  // 3 x (G * d_feature)
  ad::Parameter bias;    // 1 x 3

  static FineTuneHead init(int arrays, int feature_dim, Rng& rng, const Vec3& bias = Vec3::Zero());
  int input_dim() const { return static_cast<int>(weight.value.cols()); }

  template <class F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
};

struct Prediction {
  Vec3 position = Vec3::Zero();
  std::optional<Vec3> truth;
};

/// Each array's spectrum is encoded on its own; the features are concatenated.
Prediction finetune_forward(const std::vector<spectrum::SpatialSpectrum>& spectra, const std::vector<Vec3>& origins,
                            encoder::EncoderParams& encoder, FineTuneHead& head);
/// Graph form over a batch of samples from one scene; B x 3.
ad::Var predict(ad::Tape& tape, encoder::EncoderParams& encoder, FineTuneHead& head,
                const std::vector<const data::Sample*>& samples, const spectrum::Scene& scene);
/// Squared Euclidean error; throws without a label.
double finetune_loss(const Prediction& prediction);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();  // unit
};

/// Least-squares intersection: solves sum (I - v v^T) p = sum (I - v v^T) O.
Vec3 triangulate(const std::vector<Ray>& rays);
/// Baseline: each array's argmax bin center as a global ray, then triangulate.
Vec3 triangulate_spectra(const spectrum::Scene& scene, const std::vector<spectrum::SpatialSpectrum>& spectra);

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

/// Seeded shuffle of `count` indices; the last test_fraction is the test split
/// and the first round(label_fraction * count) of the rest is the training split.
Split make_split(int count, double label_fraction, std::uint64_t seed, double test_fraction = 0.2);

struct ErrorStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double p90 = 0.0;
};

/// Linear-interpolated percentile of unsorted values, q in [0, 100].
double percentile(std::vector<double> values, double q);
ErrorStats error_stats(const std::vector<double>& errors);

struct FinetuneConfig {
  double label_fraction = 0.2;
  double test_fraction = 0.2;
  long steps = 300;
  int batch_size = 8;
  double lr_min = 3e-5;
  double lr_max = 1e-3;
  double warmup_fraction = 0.05;
  optim::AdamConfig adam;

  void validate() const;
};

struct FinetuneResult {
  ErrorStats stats;            // meters
  std::vector<double> errors;  // per test sample, meters
  Split split;
  std::vector<double> losses;  // per step, batch mean squared error
};

/// Trains head + encoder on the labeled training split and evaluates the
/// unsquared Euclidean error on the test split. The encoder is copied.
FinetuneResult finetune_run(const data::SceneData& scene, const encoder::EncoderParams& encoder,
                            const FinetuneConfig& config, std::uint64_t seed);

}  // namespace rfrp::finetune
