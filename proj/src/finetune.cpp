#include "rfrp/finetune.hpp"

#include "rfrp/pretrain.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace rfrp::finetune {

FineTuneHead FineTuneHead::init(int arrays, int feature_dim, Rng& rng, const Vec3& bias) {
  require(arrays >= 1 && feature_dim >= 1, "FineTuneHead: arrays and feature_dim must be >= 1");
  const Index in = static_cast<Index>(arrays) * feature_dim;
  FineTuneHead h;
  h.weight = ad::Parameter("head.weight", nn::uniform_init(3, in, in, rng));
  h.bias = ad::Parameter("head.bias", Matrix(bias.transpose()));
  return h;
}

ad::Var predict(ad::Tape& tape, encoder::EncoderParams& encoder, FineTuneHead& head,
                const std::vector<const data::Sample*>& samples, const spectrum::Scene& scene) {
  require(!samples.empty(), "predict: empty batch");
  const Index g_count = static_cast<Index>(scene.arrays.size());
  require(head.input_dim() == g_count * encoder.config.feature_dim,
          "predict: head expects " + std::to_string(head.input_dim()) + " inputs, scene gives " +
              std::to_string(g_count * encoder.config.feature_dim));
  const ad::Var tokens = pretrain::embed_samples(tape, encoder, samples, scene);
  const auto fwd = encoder::forward(tape, encoder, tokens, kPatchesPerArray);
  const ad::Var concat = ad::reshape(fwd.features, static_cast<Index>(samples.size()), head.input_dim());
  return ad::add_row(ad::matmul_nt(concat, tape.leaf(head.weight)), tape.leaf(head.bias));
}

Prediction finetune_forward(const std::vector<spectrum::SpatialSpectrum>& spectra, const std::vector<Vec3>& origins,
                            encoder::EncoderParams& encoder, FineTuneHead& head) {
  require(spectra.size() == origins.size(), "finetune_forward: one origin per spectrum is required");
  require(head.input_dim() == static_cast<int>(spectra.size()) * encoder.config.feature_dim,
          "finetune_forward: spectrum count does not match the head");
  spectrum::Scene scene;
  for (const auto& o : origins) {
    spectrum::ArrayGeometry a;
    a.origin = o;
    scene.arrays.push_back(a);
  }
  data::Sample sample;
  sample.spectra = spectra;
  ad::Tape tape;
  const Matrix p = predict(tape, encoder, head, {&sample}, scene).value();
  return {Vec3(p(0, 0), p(0, 1), p(0, 2)), std::nullopt};
}

double finetune_loss(const Prediction& prediction) {
  if (!prediction.truth) throw InvalidArgument("finetune_loss: prediction has no label");
  return (prediction.position - *prediction.truth).squaredNorm();
}

Vec3 triangulate(const std::vector<Ray>& rays) {
  require(rays.size() >= 2, "triangulate: at least two rays are required");
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const auto& r : rays) {
    require(r.origin.allFinite() && r.direction.allFinite() && r.direction.norm() > 0.0,
            "triangulate: invalid ray");
    const Vec3 v = r.direction.normalized();
    const Mat3 proj = Mat3::Identity() - v * v.transpose();
    a += proj;
    b += proj * r.origin;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(a);
  const Vec3 ev = eig.eigenvalues();
  if (ev(0) <= 1e-10 * ev(2)) {
    throw DegenerateInput("triangulate: rays are parallel, intersection is undetermined (smallest eigenvalue " +
                          std::to_string(ev(0)) + ")");
  }
  return eig.eigenvectors() * (ev.cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * b));
}

Vec3 triangulate_spectra(const spectrum::Scene& scene, const std::vector<spectrum::SpatialSpectrum>& spectra) {
  require(spectra.size() == scene.arrays.size(), "triangulate_spectra: one spectrum per array is required");
  std::vector<Ray> rays;
  for (std::size_t g = 0; g < spectra.size(); ++g) {
    const auto& a = scene.arrays[g];
    rays.push_back({a.origin, a.rotation * spectrum::unit_vector(spectrum::argmax_direction(spectra[g]))});
  }
  return triangulate(rays);
}

Split make_split(int count, double label_fraction, std::uint64_t seed, double test_fraction) {
  require(count >= 2, "make_split: need at least two samples");
  require(label_fraction > 0.0 && label_fraction <= 1.0, "make_split: label_fraction outside (0, 1]");
  require(test_fraction > 0.0 && test_fraction < 1.0, "make_split: test_fraction outside (0, 1)");
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const int test = static_cast<int>(std::lround(test_fraction * count));
  const int pool = count - test;
  const int train = std::min(pool, static_cast<int>(std::lround(label_fraction * count)));
  Split s;
  s.train.assign(order.begin(), order.begin() + train);
  s.test.assign(order.begin() + pool, order.end());
  if (s.train.empty() || s.test.empty()) throw InvalidArgument("make_split: empty train or test split");
  return s;
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), "percentile: no values");
  require(q >= 0.0 && q <= 100.0, "percentile: q outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ErrorStats error_stats(const std::vector<double>& errors) {
  require(!errors.empty(), "error_stats: no errors");
  ErrorStats s;
  s.count = errors.size();
  s.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  s.median = percentile(errors, 50);
  s.p25 = percentile(errors, 25);
  s.p75 = percentile(errors, 75);
  s.p90 = percentile(errors, 90);
  return s;
}

void FinetuneConfig::validate() const {
  require(steps >= 1 && batch_size >= 1, "FinetuneConfig: steps and batch size must be >= 1");
  require(lr_min >= 0.0 && lr_max >= lr_min, "FinetuneConfig: need 0 <= lr_min <= lr_max");
  require(warmup_fraction >= 0.0 && warmup_fraction <= 1.0, "FinetuneConfig: warmup_fraction outside [0, 1]");
}

FinetuneResult finetune_run(const data::SceneData& scene, const encoder::EncoderParams& encoder_init,
                            const FinetuneConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<const data::Sample*> labeled;
  for (const auto& s : scene.samples) {
    if (s.tx) labeled.push_back(&s);
  }
  require(labeled.size() >= 2, "finetune_run: scene '" + scene.scene.scene_id + "' has fewer than two labels");

  FinetuneResult result;
  result.split = make_split(static_cast<int>(labeled.size()), config.label_fraction, seed, config.test_fraction);

  Vec3 mean = Vec3::Zero();
  for (int i : result.split.train) mean += *labeled[static_cast<std::size_t>(i)]->tx;
  mean /= static_cast<double>(result.split.train.size());

  encoder::EncoderParams encoder = encoder_init;
  Rng rng(mix_seed(seed, 0x5eed));
  FineTuneHead head =
      FineTuneHead::init(static_cast<int>(scene.scene.arrays.size()), encoder.config.feature_dim, rng, mean);
  std::vector<ad::Parameter*> params = optim::parameters_of(encoder);
  for (auto* p : optim::parameters_of(head)) params.push_back(p);
  optim::OptimizerState opt{config.adam, {}};

  const long warmup = static_cast<long>(std::lround(config.warmup_fraction * static_cast<double>(config.steps)));
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), result.split.train.size());
  std::vector<int> pool = result.split.train;
  for (long step = 0; step < config.steps; ++step) {
    // Partial Fisher-Yates over the training pool.
    std::vector<const data::Sample*> chosen;
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      chosen.push_back(labeled[static_cast<std::size_t>(pool[i])]);
    }
    Matrix truth(static_cast<Index>(batch), 3);
    for (std::size_t i = 0; i < batch; ++i) truth.row(static_cast<Index>(i)) = chosen[i]->tx->transpose();

    optim::zero_grads(params);
    ad::Tape tape;
    const ad::Var pred = predict(tape, encoder, head, chosen, scene.scene);
    const ad::Var loss =
        ad::scale(ad::squared_norm(ad::sub(pred, tape.constant(truth))), 1.0 / static_cast<double>(batch));
    tape.backward(loss);
    result.losses.push_back(loss.value()(0, 0));
    opt.step(params, optim::lr_at(step, config.steps, warmup, config.lr_min, config.lr_max));
  }

  constexpr std::size_t kEvalChunk = 32;
  for (std::size_t start = 0; start < result.split.test.size(); start += kEvalChunk) {
    std::vector<const data::Sample*> chunk;
    for (std::size_t i = start; i < std::min(start + kEvalChunk, result.split.test.size()); ++i) {
      chunk.push_back(labeled[static_cast<std::size_t>(result.split.test[i])]);
    }
    ad::Tape tape;
    const Matrix p = predict(tape, encoder, head, chunk, scene.scene).value();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      result.errors.push_back((p.row(static_cast<Index>(i)).transpose() - *chunk[i]->tx).norm());
    }
  }
  result.stats = error_stats(result.errors);
  return result;
}

}  // namespace rfrp::finetune
