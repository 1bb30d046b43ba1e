#pragma once

// Masked asymmetric-autoencoder pretraining: a shared encoder reads the kept
// patches of each array, and the scene's own radiance field renders the full
// spectrum back from the resulting latent code.

#include "rfrp/data.hpp"
#include "rfrp/encoder.hpp"
#include "rfrp/optim.hpp"
#include "rfrp/rfnerf.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace rfrp::pretrain {

// ---- masking ----

struct MaskPlan {
  double ratio = 0.75;
  std::vector<std::vector<int>> kept;    // per array, sorted patch indices
  std::vector<std::vector<int>> masked;  // per array, sorted patch indices
};

/// round(ratio * 36); throws unless 0 < ratio < 1 and at least one patch is kept.
int masked_count(double ratio);
MaskPlan make_mask_plan(int arrays, double ratio, Rng& rng);

struct MaskedSequence {
  encoder::TokenSequence sequence;
  MaskPlan plan;
};

/// Drops round(ratio * 36) tokens per array from an already embedded sequence.
MaskedSequence mask_patches(const encoder::TokenSequence& sequence, double ratio, Rng& rng);

// ---- losses and metrics ----

struct LossWeights {
  double cons = 1.0;
  double bal = 0.01;
  double lat = 0.01;
};

struct CompositeLoss {
  double cons = 0.0;
  double bal = 0.0;
  double lat = 0.0;
  double total = 0.0;
  LossWeights weights;
};

double consistency_loss(const std::vector<spectrum::SpatialSpectrum>& truth,
                        const std::vector<spectrum::SpatialSpectrum>& recon, double lambda = 1.0);
double latent_loss(const Vector& z, double lambda = 0.01);
/// Global SSIM over the grid; dynamic range is the largest entry of a.
double ssim(const spectrum::SpatialSpectrum& a, const spectrum::SpatialSpectrum& b);
double ssim(const Matrix& a, const Matrix& b);

// ---- decoders ----

/// One radiance field per scene; created on first use from a seed derived from
/// the registry seed and the scene id, so creation order does not matter.
class DecoderRegistry {
 public:
  DecoderRegistry() = default;
  DecoderRegistry(rfnerf::FieldConfig config, std::uint64_t seed) : config_(config), seed_(seed) {}

  rfnerf::FieldParams& get_or_create(const std::string& scene_id, const spectrum::Box& bounds);
  rfnerf::FieldParams* find(const std::string& scene_id);
  bool contains(const std::string& scene_id) const { return fields_.count(scene_id) != 0; }
  std::size_t size() const { return fields_.size(); }
  std::map<std::string, rfnerf::FieldParams>& fields() { return fields_; }
  const rfnerf::FieldConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  static std::string parameter_prefix(const std::string& scene_id) { return "decoder." + scene_id; }

 private:
  rfnerf::FieldConfig config_;
  std::uint64_t seed_ = 0;
  std::map<std::string, rfnerf::FieldParams> fields_;
};

// ---- training ----

struct PretrainConfig {
  double mask_ratio = 0.75;
  LossWeights weights;
  optim::AdamConfig adam;
  double lr_min = 3e-5;
  double lr_max = 3e-4;
  double warmup_fraction = 0.05;
  long total_steps = 1000;
  int batch_size = 8;
  int ray_samples = 16;  // per direction during training
  std::optional<double> max_range;  // defaults to each scene's bounds diagonal

  long warmup_steps() const;
  void validate() const;
};

struct StepResult {
  long step = 0;
  std::string scene_id;
  double lr = 0.0;
  CompositeLoss loss;
  std::vector<std::vector<long>> expert_counts;  // per MoE layer
};

/// Owns the per-scene ray geometry caches; holds references to the model state.
class Pretrainer {
 public:
  Pretrainer(PretrainConfig config, encoder::EncoderParams& encoder, DecoderRegistry& registry,
             optim::OptimizerState& optimizer, Rng& rng);

  /// Loss and gradients (accumulated into parameter grads) for a batch.
  CompositeLoss evaluate(const std::vector<const data::Sample*>& batch, const spectrum::Scene& scene, Rng& mask_rng,
                         bool backward, std::vector<std::vector<long>>* expert_counts = nullptr);

  /// mask -> encode -> render -> composite loss -> one update of the encoder
  /// and this scene's decoder.
  StepResult step(const std::vector<const data::Sample*>& batch, const spectrum::Scene& scene);

  /// Renders every array of a sample from its masked input.
  std::vector<spectrum::SpatialSpectrum> reconstruct(const data::Sample& sample, const spectrum::Scene& scene,
                                                     Rng& mask_rng, std::optional<int> samples = std::nullopt);

  long steps_done() const { return steps_done_; }
  void set_steps_done(long s) { steps_done_ = s; }
  const PretrainConfig& config() const { return config_; }

 private:
  const std::vector<rfnerf::RayBundle>& bundles(const spectrum::Scene& scene, rfnerf::FieldParams& field, int samples);

  PretrainConfig config_;
  encoder::EncoderParams& encoder_;
  DecoderRegistry& registry_;
  optim::OptimizerState& optimizer_;
  Rng& rng_;
  long steps_done_ = 0;
  std::map<std::pair<std::string, int>, std::vector<rfnerf::RayBundle>> bundle_cache_;
};

/// Embedded token rows for all 36 patches of every (sample, array), stacked
/// sample-major then array then patch; graph form.
ad::Var embed_samples(ad::Tape& tape, encoder::EncoderParams& params,
                      const std::vector<const data::Sample*>& samples, const spectrum::Scene& scene);

}  // namespace rfrp::pretrain
