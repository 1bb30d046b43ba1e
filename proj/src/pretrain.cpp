#include "rfrp/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rfrp::pretrain {

int masked_count(double ratio) {
  require(ratio > 0.0 && ratio < 1.0, "mask ratio must lie in (0, 1)");
  const int masked = static_cast<int>(std::lround(ratio * kPatchesPerArray));
  require(masked < kPatchesPerArray, "mask ratio leaves no kept tokens");
  return masked;
}

MaskPlan make_mask_plan(int arrays, double ratio, Rng& rng) {
  require(arrays >= 1, "make_mask_plan: need at least one array");
  const int masked = masked_count(ratio);
  MaskPlan plan;
  plan.ratio = ratio;
  for (int a = 0; a < arrays; ++a) {
    std::vector<int> order(kPatchesPerArray);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first `masked` entries are a uniform subset.
    for (int i = 0; i < masked; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(kPatchesPerArray - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<int> m(order.begin(), order.begin() + masked);
    std::vector<int> k(order.begin() + masked, order.end());
    std::sort(m.begin(), m.end());
    std::sort(k.begin(), k.end());
    plan.masked.push_back(std::move(m));
    plan.kept.push_back(std::move(k));
  }
  return plan;
}

MaskedSequence mask_patches(const encoder::TokenSequence& sequence, double ratio, Rng& rng) {
  require(static_cast<Index>(sequence.index_map.size()) == sequence.tokens.rows(),
          "mask_patches: index map does not match token rows");
  int arrays = 0;
  for (const auto& [a, p] : sequence.index_map) arrays = std::max(arrays, a + 1);
  MaskedSequence out;
  out.plan = make_mask_plan(arrays, ratio, rng);
  std::vector<Index> rows;
  for (std::size_t r = 0; r < sequence.index_map.size(); ++r) {
    const auto [a, p] = sequence.index_map[r];
    const auto& kept = out.plan.kept[static_cast<std::size_t>(a)];
    if (std::binary_search(kept.begin(), kept.end(), p)) {
      rows.push_back(static_cast<Index>(r));
      out.sequence.index_map.push_back(sequence.index_map[r]);
    }
  }
  out.sequence.tokens.resize(static_cast<Index>(rows.size()), sequence.tokens.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.sequence.tokens.row(static_cast<Index>(i)) = sequence.tokens.row(rows[i]);
  return out;
}

double consistency_loss(const std::vector<spectrum::SpatialSpectrum>& truth,
                        const std::vector<spectrum::SpatialSpectrum>& recon, double lambda) {
  require(truth.size() == recon.size(), "consistency_loss: spectrum counts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i].magnitudes.rows() == recon[i].magnitudes.rows() &&
                truth[i].magnitudes.cols() == recon[i].magnitudes.cols(),
            "consistency_loss: spectrum shapes differ");
    total += (truth[i].magnitudes - recon[i].magnitudes).squaredNorm();
  }
  return lambda * total;
}

double latent_loss(const Vector& z, double lambda) { return lambda * z.squaredNorm(); }

double ssim(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols() && a.size() > 0, "ssim: shapes differ");
  double range = a.maxCoeff();
  if (range <= 0.0) {
    if (a == b) return 1.0;
    range = 1.0;
  }
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const double n = static_cast<double>(a.size());
  const double mu_a = a.mean();
  const double mu_b = b.mean();
  const auto da = a.array() - mu_a;
  const auto db = b.array() - mu_b;
  const double var_a = da.square().sum() / n;
  const double var_b = db.square().sum() / n;
  const double cov = (da * db).sum() / n;
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

double ssim(const spectrum::SpatialSpectrum& a, const spectrum::SpatialSpectrum& b) {
  return ssim(a.magnitudes, b.magnitudes);
}

rfnerf::FieldParams& DecoderRegistry::get_or_create(const std::string& scene_id, const spectrum::Box& bounds) {
  auto it = fields_.find(scene_id);
  if (it != fields_.end()) return it->second;
  Rng rng(mix_seed(seed_, stable_hash(scene_id)));
  return fields_.emplace(scene_id, rfnerf::FieldParams::init(config_, bounds, rng, parameter_prefix(scene_id)))
      .first->second;
}

rfnerf::FieldParams* DecoderRegistry::find(const std::string& scene_id) {
  auto it = fields_.find(scene_id);
  return it == fields_.end() ? nullptr : &it->second;
}

long PretrainConfig::warmup_steps() const {
  return static_cast<long>(std::lround(warmup_fraction * static_cast<double>(total_steps)));
}

void PretrainConfig::validate() const {
  masked_count(mask_ratio);
  require(total_steps >= 1 && batch_size >= 1, "PretrainConfig: steps and batch size must be >= 1");
  require(ray_samples >= 2, "PretrainConfig: ray_samples must be >= 2");
  require(warmup_fraction >= 0.0 && warmup_fraction <= 1.0, "PretrainConfig: warmup_fraction outside [0, 1]");
  require(lr_min >= 0.0 && lr_max >= lr_min, "PretrainConfig: need 0 <= lr_min <= lr_max");
  require(weights.cons >= 0.0 && weights.bal >= 0.0 && weights.lat >= 0.0, "PretrainConfig: negative loss weight");
}

Pretrainer::Pretrainer(PretrainConfig config, encoder::EncoderParams& encoder, DecoderRegistry& registry,
                       optim::OptimizerState& optimizer, Rng& rng)
    : config_(std::move(config)), encoder_(encoder), registry_(registry), optimizer_(optimizer), rng_(rng) {
  config_.validate();
  require(registry_.config().latent_dim == encoder_.config.feature_dim,
          "Pretrainer: decoder latent_dim must equal encoder feature_dim");
  optimizer_.config = config_.adam;
}

const std::vector<rfnerf::RayBundle>& Pretrainer::bundles(const spectrum::Scene& scene, rfnerf::FieldParams& field,
                                                          int samples) {
  auto key = std::make_pair(scene.scene_id, samples);
  auto it = bundle_cache_.find(key);
  if (it != bundle_cache_.end()) return it->second;
  std::vector<rfnerf::RayBundle> out;
  for (const auto& a : scene.arrays) {
    out.push_back(rfnerf::spectrum_bundle(field, a.origin, a.rotation, config_.max_range, samples));
  }
  return bundle_cache_.emplace(key, std::move(out)).first->second;
}

ad::Var embed_samples(ad::Tape& tape, encoder::EncoderParams& params, const std::vector<const data::Sample*>& samples,
                      const spectrum::Scene& scene) {
  const Index g_count = static_cast<Index>(scene.arrays.size());
  const Index rows = static_cast<Index>(samples.size()) * g_count * kPatchesPerArray;
  const int d = params.config.embed_dim;
  std::vector<Matrix> offsets;
  for (Index g = 0; g < g_count; ++g) {
    offsets.push_back(encoder::embedding_offsets(static_cast<int>(g), scene.arrays[static_cast<std::size_t>(g)].origin, d));
  }
  Matrix patches(rows, kPatchValues);
  Matrix offs(rows, d);
  Index r = 0;
  for (const auto* s : samples) {
    require(static_cast<Index>(s->spectra.size()) == g_count, "embed_samples: spectrum count differs from arrays");
    for (Index g = 0; g < g_count; ++g) {
      patches.middleRows(r, kPatchesPerArray) = spectrum::patch_rows(s->spectra[static_cast<std::size_t>(g)].magnitudes);
      offs.middleRows(r, kPatchesPerArray) = offsets[static_cast<std::size_t>(g)];
      r += kPatchesPerArray;
    }
  }
  return encoder::embed_patches(tape, params, patches, offs);
}

CompositeLoss Pretrainer::evaluate(const std::vector<const data::Sample*>& batch, const spectrum::Scene& scene,
                                   Rng& mask_rng, bool backward, std::vector<std::vector<long>>* expert_counts) {
  require(!batch.empty(), "pretrain: empty batch");
  for (const auto* s : batch) {
    require(s->scene_id == scene.scene_id, "pretrain: batch mixes scenes ('" + s->scene_id + "' vs '" +
                                               scene.scene_id + "')");
  }
  const Index b_count = static_cast<Index>(batch.size());
  const Index g_count = static_cast<Index>(scene.arrays.size());
  rfnerf::FieldParams& field = registry_.get_or_create(scene.scene_id, scene.bounds);

  ad::Tape tape;
  const ad::Var all_tokens = embed_samples(tape, encoder_, batch, scene);
  const int kept = kPatchesPerArray - masked_count(config_.mask_ratio);
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(b_count * g_count * kept));
  for (Index b = 0; b < b_count; ++b) {
    const MaskPlan plan = make_mask_plan(static_cast<int>(g_count), config_.mask_ratio, mask_rng);
    for (Index g = 0; g < g_count; ++g) {
      const Index base = (b * g_count + g) * kPatchesPerArray;
      for (int p : plan.kept[static_cast<std::size_t>(g)]) rows.push_back(base + p);
    }
  }
  const auto fwd = encoder::forward(tape, encoder_, ad::gather_rows(all_tokens, rows), kept);

  const auto& bundle_set = bundles(scene, field, config_.ray_samples);
  ad::Var cons;
  for (Index g = 0; g < g_count; ++g) {
    const auto& bundle = bundle_set[static_cast<std::size_t>(g)];
    const rfnerf::AttenuationPass pass = rfnerf::attenuation_pass(tape, field, bundle);
    for (Index b = 0; b < b_count; ++b) {
      const ad::Var z = ad::slice_rows(fwd.features, b * g_count + g, 1);
      const ad::Var img = rfnerf::render(tape, field, bundle, pass, rfnerf::latent_condition(tape, field, z));
      const ad::Var diff =
          ad::sub(img, tape.constant(batch[static_cast<std::size_t>(b)]->spectra[static_cast<std::size_t>(g)].magnitudes));
      const ad::Var term = ad::squared_norm(diff);
      cons = cons.valid() ? ad::add(cons, term) : term;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b_count);
  cons = ad::scale(cons, config_.weights.cons * inv_b);
  const ad::Var lat = ad::scale(ad::squared_norm(fwd.features), config_.weights.lat * inv_b);
  ad::Var total = ad::add(cons, lat);
  double bal_value = 0.0;
  for (const auto& trace : fwd.moe) {
    const ad::Var bal = moe::balance_loss(trace.scores, trace.routing, encoder_.config.moe.top_k, config_.weights.bal);
    bal_value += bal.value()(0, 0);
    total = ad::add(total, bal);
    if (expert_counts) expert_counts->push_back(trace.routing.counts());
  }
  if (backward) tape.backward(total);

  CompositeLoss loss;
  loss.cons = cons.value()(0, 0);
  loss.lat = lat.value()(0, 0);
  loss.bal = bal_value;
  loss.total = total.value()(0, 0);
  loss.weights = config_.weights;
  return loss;
}

StepResult Pretrainer::step(const std::vector<const data::Sample*>& batch, const spectrum::Scene& scene) {
  rfnerf::FieldParams& field = registry_.get_or_create(scene.scene_id, scene.bounds);
  std::vector<ad::Parameter*> params = optim::parameters_of(encoder_);
  for (auto* p : optim::parameters_of(field)) params.push_back(p);
  optim::zero_grads(params);

  StepResult result;
  result.step = steps_done_;
  result.scene_id = scene.scene_id;
  result.lr = optim::lr_at(std::min(steps_done_, config_.total_steps), config_.total_steps, config_.warmup_steps(),
                           config_.lr_min, config_.lr_max);
  result.loss = evaluate(batch, scene, rng_, true, &result.expert_counts);
  optimizer_.step(params, result.lr);
  ++steps_done_;
  return result;
}

std::vector<spectrum::SpatialSpectrum> Pretrainer::reconstruct(const data::Sample& sample, const spectrum::Scene& scene,
                                                               Rng& mask_rng, std::optional<int> samples) {
  rfnerf::FieldParams& field = registry_.get_or_create(scene.scene_id, scene.bounds);
  const Index g_count = static_cast<Index>(scene.arrays.size());
  ad::Tape tape;
  const ad::Var all_tokens = embed_samples(tape, encoder_, {&sample}, scene);
  const int kept = kPatchesPerArray - masked_count(config_.mask_ratio);
  const MaskPlan plan = make_mask_plan(static_cast<int>(g_count), config_.mask_ratio, mask_rng);
  std::vector<Index> rows;
  for (Index g = 0; g < g_count; ++g) {
    for (int p : plan.kept[static_cast<std::size_t>(g)]) rows.push_back(g * kPatchesPerArray + p);
  }
  const auto fwd = encoder::forward(tape, encoder_, ad::gather_rows(all_tokens, rows), kept);
  const auto& bundle_set = bundles(scene, field, samples.value_or(config_.ray_samples));
  std::vector<spectrum::SpatialSpectrum> out;
  for (Index g = 0; g < g_count; ++g) {
    const auto& bundle = bundle_set[static_cast<std::size_t>(g)];
    const auto pass = rfnerf::attenuation_pass(tape, field, bundle);
    const ad::Var z = ad::slice_rows(fwd.features, g, 1);
    spectrum::SpatialSpectrum s;
    s.magnitudes = rfnerf::render(tape, field, bundle, pass, rfnerf::latent_condition(tape, field, z)).value();
    s.array_index = static_cast<int>(g);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rfrp::pretrain
