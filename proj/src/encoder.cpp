#include "rfrp/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace rfrp::encoder {

bool EncoderConfig::is_moe_layer(int layer_one_based) const {
  return std::find(moe_layers.begin(), moe_layers.end(), layer_one_based) != moe_layers.end();
}

void EncoderConfig::validate() const {
  require(layers >= 0, "EncoderConfig: layers must be >= 0");
  require(embed_dim >= 2 && embed_dim % 2 == 0, "EncoderConfig: embed_dim must be even and >= 2");
  require(heads >= 1 && embed_dim % heads == 0, "EncoderConfig: embed_dim must be divisible by heads");
  require(ffn_dim >= 1 && feature_dim >= 1 && mlp_dim >= 1, "EncoderConfig: dimensions must be >= 1");
  for (int l : moe_layers) require(l >= 1 && l <= layers, "EncoderConfig: MoE layer index outside 1..L");
  if (!moe_layers.empty()) moe.validate();
}

EncoderParams EncoderParams::init(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const Index d = config.embed_dim;
  EncoderParams p;
  p.config = config;
  p.token_weights = ad::Parameter("encoder.token.weight", nn::uniform_init(d, kPatchValues, kPatchValues, rng));
  p.token_bias = ad::Parameter("encoder.token.bias", nn::uniform_init(1, d, kPatchValues, rng));
  for (int l = 1; l <= config.layers; ++l) {
    const std::string name = "encoder.layer" + std::to_string(l);
    LayerParams layer;
    layer.wq = ad::Parameter(name + ".wq", nn::uniform_init(d, d, d, rng));
    layer.wk = ad::Parameter(name + ".wk", nn::uniform_init(d, d, d, rng));
    layer.wv = ad::Parameter(name + ".wv", nn::uniform_init(d, d, d, rng));
    layer.wout = ad::Parameter(name + ".wout", nn::uniform_init(d, d, d, rng));
    layer.ln1_gain = ad::Parameter(name + ".ln1.gain", Matrix::Ones(1, d));
    layer.ln1_bias = ad::Parameter(name + ".ln1.bias", Matrix::Zero(1, d));
    layer.ln2_gain = ad::Parameter(name + ".ln2.gain", Matrix::Ones(1, d));
    layer.ln2_bias = ad::Parameter(name + ".ln2.bias", Matrix::Zero(1, d));
    if (config.is_moe_layer(l)) {
      layer.experts.emplace(name + ".moe", config.moe, d, config.ffn_dim, rng);
    } else {
      layer.ffn.emplace(name + ".ffn", d, config.ffn_dim, rng);
    }
    p.layers.push_back(std::move(layer));
  }
  p.regress1 = nn::Dense("encoder.regress1", d, config.mlp_dim, rng);
  p.regress2 = nn::Dense("encoder.regress2", config.mlp_dim, config.feature_dim, rng);
  return p;
}

std::size_t EncoderParams::parameter_count() {
  std::size_t n = 0;
  visit([&n](ad::Parameter& p) { n += static_cast<std::size_t>(p.size()); });
  return n;
}

RowVector positional_encoding(double position, int dim) {
  require(dim > 0 && dim % 2 == 0, "positional_encoding: dimension must be even");
  RowVector pe(dim);
  for (int k = 0; k < dim / 2; ++k) {
    const double angle = position / std::pow(10000.0, 2.0 * k / dim);
    pe(2 * k) = std::sin(angle);
    pe(2 * k + 1) = std::cos(angle);
  }
  return pe;
}

double token_position(int array, int patch) { return array + 36.0 * patch; }

RowVector encode_origin(const Vec3& origin_m, int dim) {
  require(origin_m.allFinite(), "encode_origin: non-finite coordinates");
  RowVector out = RowVector::Zero(dim);
  for (int c = 0; c < 3; ++c) out += positional_encoding(100.0 * origin_m(c), dim);
  return out;
}

Matrix embedding_offsets(int array, const Vec3& origin, int dim) {
  const RowVector origin_pe = encode_origin(origin, dim);
  Matrix out(kPatchesPerArray, dim);
  for (int j = 0; j < kPatchesPerArray; ++j) out.row(j) = positional_encoding(token_position(array, j), dim) + origin_pe;
  return out;
}

TokenSequence embed(const std::vector<Matrix>& raw_tokens, const std::vector<Vec3>& origins) {
  require(!raw_tokens.empty(), "embed: no arrays");
  require(raw_tokens.size() == origins.size(), "embed: one origin per array is required");
  const Index d = raw_tokens.front().cols();
  TokenSequence seq;
  seq.tokens.resize(static_cast<Index>(raw_tokens.size()) * kPatchesPerArray, d);
  for (std::size_t i = 0; i < raw_tokens.size(); ++i) {
    const Matrix& raw = raw_tokens[i];
    require(raw.rows() == kPatchesPerArray && raw.cols() == d, "embed: each array needs 36 tokens of equal width");
    const int array = static_cast<int>(i);
    seq.tokens.middleRows(array * kPatchesPerArray, kPatchesPerArray) =
        raw + embedding_offsets(array, origins[i], static_cast<int>(d));
    for (int j = 0; j < kPatchesPerArray; ++j) seq.index_map.emplace_back(array, j);
  }
  return seq;
}

ad::Var attention(ad::Var h, ad::Var wq, ad::Var wk, ad::Var wv, Index seq_len, int heads) {
  return ad::block_attention(ad::matmul(h, wq), ad::matmul(h, wk), ad::matmul(h, wv), seq_len, heads);
}

ad::Var multi_head(ad::Tape& tape, ad::Var h, LayerParams& layer, Index seq_len, int heads) {
  const ad::Var heads_out =
      attention(h, tape.leaf(layer.wq), tape.leaf(layer.wk), tape.leaf(layer.wv), seq_len, heads);
  return ad::matmul(heads_out, tape.leaf(layer.wout));
}

ad::Var ffn(ad::Var x, ad::Var w1, ad::Var b1, ad::Var w2, ad::Var b2) {
  return ad::add_row(ad::matmul(ad::relu(ad::add_row(ad::matmul(x, w1), b1)), w2), b2);
}

ForwardResult forward(ad::Tape& tape, EncoderParams& params, ad::Var tokens, Index seq_len) {
  const EncoderConfig& cfg = params.config;
  require(seq_len >= 1 && tokens.rows() % seq_len == 0, "encoder forward: rows must be a multiple of seq_len");
  require(tokens.cols() == cfg.embed_dim, "encoder forward: token width differs from embed_dim");
  ForwardResult result;
  ad::Var h = tokens;
  for (int l = 1; l <= cfg.layers; ++l) {
    LayerParams& layer = params.layers[static_cast<std::size_t>(l - 1)];
    const ad::Var a = multi_head(tape, h, layer, seq_len, cfg.heads);
    const ad::Var u =
        ad::layer_norm_rows(ad::add(a, h), tape.leaf(layer.ln1_gain), tape.leaf(layer.ln1_bias), kLayerNormEps);
    if (layer.experts) {
      auto out = moe::moe_forward(tape, u, *layer.experts, tape.leaf(layer.ln2_gain), tape.leaf(layer.ln2_bias),
                                  kLayerNormEps);
      h = out.output;
      result.moe.push_back({l, out.scores, std::move(out.routing)});
    } else {
      h = ad::layer_norm_rows(ad::add((*layer.ffn)(tape, u), u), tape.leaf(layer.ln2_gain),
                              tape.leaf(layer.ln2_bias), kLayerNormEps);
    }
  }
  result.hidden = h;
  const ad::Var pooled = ad::segment_mean_rows(h, seq_len);
  result.features = params.regress2(tape, ad::relu(params.regress1(tape, pooled)));
  return result;
}

ad::Var embed_patches(ad::Tape& tape, EncoderParams& params, const Matrix& patch_rows, const Matrix& offsets) {
  require(patch_rows.cols() == kPatchValues, "embed_patches: patch rows must have 9 columns");
  require(offsets.rows() == patch_rows.rows() && offsets.cols() == params.config.embed_dim,
          "embed_patches: offsets shape mismatch");
  const ad::Var raw =
      ad::add_row(ad::matmul_nt(tape.constant(patch_rows), tape.leaf(params.token_weights)), tape.leaf(params.token_bias));
  return ad::add(raw, tape.constant(offsets));
}

Matrix attention(const Matrix& h, const Matrix& wq, const Matrix& wk, const Matrix& wv) {
  require(wq.rows() == h.cols() && wk.rows() == h.cols() && wv.rows() == h.cols(),
          "attention: projection rows must equal d");
  require(wq.cols() == wk.cols() && wq.cols() == wv.cols(), "attention: projection widths differ");
  ad::Tape tape;
  return attention(tape.constant(h), tape.constant(wq), tape.constant(wk), tape.constant(wv), h.rows(), 1).value();
}

Matrix multi_head(const Matrix& h, LayerParams& layer, int heads) {
  ad::Tape tape;
  return multi_head(tape, tape.constant(h), layer, h.rows(), heads).value();
}

RowVector layer_norm(const RowVector& x, const RowVector& gain, const RowVector& bias) {
  ad::Tape tape;
  return ad::layer_norm_rows(tape.constant(Matrix(x)), tape.constant(Matrix(gain)), tape.constant(Matrix(bias)),
                             kLayerNormEps)
      .value()
      .row(0);
}

RowVector ffn(const RowVector& x, const Matrix& w1, const RowVector& b1, const Matrix& w2, const RowVector& b2) {
  ad::Tape tape;
  return ffn(tape.constant(Matrix(x)), tape.constant(w1), tape.constant(Matrix(b1)), tape.constant(w2),
             tape.constant(Matrix(b2)))
      .value()
      .row(0);
}

EncoderOutput encoder_forward(const TokenSequence& sequence, EncoderParams& params) {
  require(sequence.tokens.rows() >= 1, "encoder_forward: empty sequence");
  ad::Tape tape;
  auto result = forward(tape, params, tape.constant(sequence.tokens), sequence.tokens.rows());
  EncoderOutput out;
  out.hidden = result.hidden.value();
  for (auto& m : result.moe) out.routing.push_back(std::move(m.routing));
  return out;
}

LocationFeature regress_feature(const Matrix& hidden, EncoderParams& params, int array_index) {
  require(hidden.rows() >= 1, "regress_feature: empty sequence");
  ad::Tape tape;
  const ad::Var pooled = ad::segment_mean_rows(tape.constant(hidden), hidden.rows());
  const ad::Var f = params.regress2(tape, ad::relu(params.regress1(tape, pooled)));
  return {f.value().row(0).transpose(), array_index};
}

}  // namespace rfrp::encoder
