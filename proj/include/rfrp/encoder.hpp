#pragma once

// Transformer encoder over spectrum patch tokens, with optional MoE layers and
// the mean-pool regression head that produces the location feature f_p.

#include "rfrp/autograd.hpp"
#include "rfrp/moe.hpp"
#include "rfrp/nn.hpp"
#include "rfrp/spectrum.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace rfrp::encoder {

inline constexpr double kLayerNormEps = 1e-5;

struct EncoderConfig {
  int layers = 4;
  int embed_dim = 64;
  int heads = 4;
  int ffn_dim = 256;
  std::vector<int> moe_layers{2, 4};  // 1-based layer indices
  int feature_dim = 32;
  int mlp_dim = 64;
  moe::MoeConfig moe;

  bool is_moe_layer(int layer_one_based) const;
  void validate() const;
};

struct LayerParams {
  ad::Parameter wq, wk, wv;  // d x d; head m owns columns [m d/M, (m+1) d/M)
  ad::Parameter wout;        // d x d
  ad::Parameter ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::optional<nn::Ffn> ffn;
  std::optional<moe::ExpertSet> experts;

  template <class F>
  void visit(F&& f) {
    f(wq);
    f(wk);
    f(wv);
    f(wout);
    f(ln1_gain);
    f(ln1_bias);
    f(ln2_gain);
    f(ln2_bias);
    if (ffn) ffn->visit(f);
    if (experts) experts->visit(f);
  }
};

struct EncoderParams {
  EncoderConfig config;
  ad::Parameter token_weights;  // d x 9 (W_TOKEN)
  ad::Parameter token_bias;     // 1 x d
  std::vector<LayerParams> layers;
  nn::Dense regress1;  // d -> d_mlp
  nn::Dense regress2;  // d_mlp -> d_feature

  static EncoderParams init(const EncoderConfig& config, Rng& rng);

  template <class F>
  void visit(F&& f) {
    f(token_weights);
    f(token_bias);
    for (auto& l : layers) l.visit(f);
    regress1.visit(f);
    regress2.visit(f);
  }
  std::size_t parameter_count();
};

struct TokenSequence {
  Matrix tokens;                                // T x d
  std::vector<std::pair<int, int>> index_map;   // row -> (array, patch)
};

struct LocationFeature {
  Vector values;
  int array_index = 0;
};

// ---- positional encodings ----

/// Interleaved [sin(p / 10000^(2k/d)), cos(...)] for k = 0..d/2-1.
RowVector positional_encoding(double position, int dim);
/// Scalar position of token (array, patch): array + 36 * patch.
double token_position(int array, int patch);
/// Sum of per-coordinate encodings of the origin in centimeters.
RowVector encode_origin(const Vec3& origin_m, int dim);
/// PE(i, j) + PE(O_i) rows for the 36 patches of one array.
Matrix embedding_offsets(int array, const Vec3& origin, int dim);

/// w_bar = PE(i, j) + PE(O_i) + w for every array's 36 raw tokens.
TokenSequence embed(const std::vector<Matrix>& raw_tokens, const std::vector<Vec3>& origins);

// ---- blocks, graph form ----

ad::Var attention(ad::Var h, ad::Var wq, ad::Var wk, ad::Var wv, Index seq_len, int heads);
ad::Var multi_head(ad::Tape& tape, ad::Var h, LayerParams& layer, Index seq_len, int heads);
ad::Var ffn(ad::Var x, ad::Var w1, ad::Var b1, ad::Var w2, ad::Var b2);

struct MoeTrace {
  int layer = 0;  // 1-based
  ad::Var scores;
  moe::RoutingResult routing;
};

struct ForwardResult {
  ad::Var hidden;    // (S*T) x d
  ad::Var features;  // S x d_feature
  std::vector<MoeTrace> moe;
};

/// Tokens of shape (S * seq_len) x d holding S independent sequences.
ForwardResult forward(ad::Tape& tape, EncoderParams& params, ad::Var tokens, Index seq_len);

/// Raw patch rows (S*36 x 9) -> embedded tokens, adding the constant offsets.
ad::Var embed_patches(ad::Tape& tape, EncoderParams& params, const Matrix& patch_rows, const Matrix& offsets);

// ---- blocks, plain matrix form ----

Matrix attention(const Matrix& h, const Matrix& wq, const Matrix& wk, const Matrix& wv);
Matrix multi_head(const Matrix& h, LayerParams& layer, int heads);
RowVector layer_norm(const RowVector& x, const RowVector& gain, const RowVector& bias);
RowVector ffn(const RowVector& x, const Matrix& w1, const RowVector& b1, const Matrix& w2, const RowVector& b2);

struct EncoderOutput {
  Matrix hidden;
  std::vector<moe::RoutingResult> routing;
};
EncoderOutput encoder_forward(const TokenSequence& sequence, EncoderParams& params);
LocationFeature regress_feature(const Matrix& hidden, EncoderParams& params, int array_index = 0);

}  // namespace rfrp::encoder
