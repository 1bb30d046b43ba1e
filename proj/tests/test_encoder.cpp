#include "doctest.h"
#include "gradcheck.hpp"

#include "rfrp/encoder.hpp"

#include <cmath>

using namespace rfrp;
using namespace rfrp::encoder;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

ad::Var project(ad::Var v, std::uint64_t seed = 7) {
  Rng rng(seed);
  return ad::weighted_sum(v, random_matrix(v.rows(), v.cols(), rng));
}

EncoderConfig tiny_config(bool with_moe) {
  EncoderConfig c;
  c.layers = 2;
  c.embed_dim = 8;
  c.heads = 2;
  c.ffn_dim = 12;
  c.feature_dim = 4;
  c.mlp_dim = 6;
  c.moe_layers = with_moe ? std::vector<int>{2} : std::vector<int>{};
  c.moe = {4, 1, 2};
  return c;
}

// Straightforward loop implementations used as oracles.
Matrix ref_softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  const Index t = q.rows();
  Matrix out = Matrix::Zero(t, v.cols());
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (Index i = 0; i < t; ++i) {
    std::vector<double> w(static_cast<std::size_t>(t));
    double mx = -1e300, z = 0.0;
    for (Index j = 0; j < t; ++j) {
      double s = 0.0;
      for (Index c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      w[static_cast<std::size_t>(j)] = s * scale;
      mx = std::max(mx, s * scale);
    }
    for (auto& x : w) z += (x = std::exp(x - mx));
    for (Index j = 0; j < t; ++j)
      for (Index c = 0; c < v.cols(); ++c) out(i, c) += w[static_cast<std::size_t>(j)] / z * v(j, c);
  }
  return out;
}

Matrix ref_layer_norm(const Matrix& x, const Matrix& g, const Matrix& b) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0, var = 0.0;
    for (Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    for (Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * g(0, c) + b(0, c);
  }
  return out;
}

Matrix ref_dense(const Matrix& x, const Matrix& w, const Matrix& b, bool relu) {
  Matrix out(x.rows(), w.cols());
  for (Index r = 0; r < x.rows(); ++r)
    for (Index c = 0; c < w.cols(); ++c) {
      double acc = b(0, c);
      for (Index i = 0; i < x.cols(); ++i) acc += x(r, i) * w(i, c);
      out(r, c) = relu ? std::max(acc, 0.0) : acc;
    }
  return out;
}

Matrix ref_forward(const Matrix& tokens, EncoderParams& p) {
  const auto& cfg = p.config;
  const Index dh = cfg.embed_dim / cfg.heads;
  Matrix h = tokens;
  for (auto& layer : p.layers) {
    const Matrix q = h * layer.wq.value, k = h * layer.wk.value, v = h * layer.wv.value;
    Matrix cat(h.rows(), cfg.embed_dim);
    for (int m = 0; m < cfg.heads; ++m)
      cat.middleCols(m * dh, dh) =
          ref_softmax_attention(q.middleCols(m * dh, dh), k.middleCols(m * dh, dh), v.middleCols(m * dh, dh));
    const Matrix u = ref_layer_norm(cat * layer.wout.value + h, layer.ln1_gain.value, layer.ln1_bias.value);
    const auto& f = *layer.ffn;
    const Matrix ff = ref_dense(ref_dense(u, f.inner.weight.value, f.inner.bias.value, true), f.outer.weight.value,
                                f.outer.bias.value, false);
    h = ref_layer_norm(ff + u, layer.ln2_gain.value, layer.ln2_bias.value);
  }
  return h;
}

}  // namespace

TEST_CASE("positional encoding values") {
  const RowVector zero = positional_encoding(0, 8);
  for (int k = 0; k < 8; ++k) CHECK(zero(k) == (k % 2 == 0 ? 0.0 : 1.0));
  const RowVector one = positional_encoding(1, 2);
  CHECK(one(0) == doctest::Approx(0.84147).epsilon(1e-5));
  CHECK(one(1) == doctest::Approx(0.54030).epsilon(1e-5));
  const RowVector four = positional_encoding(1, 4);
  CHECK(four(2) == doctest::Approx(std::sin(0.01)).epsilon(1e-15));
  CHECK(four(3) == doctest::Approx(std::cos(0.01)).epsilon(1e-15));
  CHECK_THROWS_AS(positional_encoding(1, 5), InvalidArgument);
  CHECK(token_position(2, 3) == 2 + 36 * 3);
}

TEST_CASE("origin encoding") {
  const RowVector z = encode_origin(Vec3::Zero(), 6);
  for (int k = 0; k < 6; ++k) CHECK(z(k) == (k % 2 == 0 ? 0.0 : 3.0));
  const RowVector x = encode_origin(Vec3(1, 0, 0), 6);
  CHECK((x - (positional_encoding(100, 6) + 2 * positional_encoding(0, 6))).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((encode_origin(Vec3(1, 1, 1), 6) - encode_origin(Vec3(2, 2, 2), 6)).norm() > 1e-3);
}

TEST_CASE("embed") {
  Rng rng(2);
  const int d = 8;
  SUBCASE("zero tokens and origins leave the positional encoding plus the origin term") {
    std::vector<Matrix> raw(3, Matrix::Zero(36, d));
    std::vector<Vec3> origins(3, Vec3::Zero());
    const auto seq = embed(raw, origins);
    CHECK(seq.tokens.rows() == 108);
    CHECK(seq.index_map.size() == 108);
    CHECK(seq.index_map[37] == std::pair<int, int>{1, 1});
    const RowVector expect = positional_encoding(token_position(1, 1), d) + encode_origin(Vec3::Zero(), d);
    CHECK((seq.tokens.row(37) - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("recomposition") {
    std::vector<Matrix> raw{random_matrix(36, d, rng), random_matrix(36, d, rng)};
    std::vector<Vec3> origins{Vec3(1.2, 3.4, 0.5), Vec3(-2, 0.1, 1)};
    const auto seq = embed(raw, origins);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 36; ++j) {
        const RowVector expect = raw[i].row(j) + positional_encoding(i + 36.0 * j, d) + encode_origin(origins[i], d);
        CHECK((seq.tokens.row(36 * i + j) - expect).cwiseAbs().maxCoeff() < 1e-14);
      }
  }
  SUBCASE("count mismatch") {
    std::vector<Matrix> raw{Matrix::Zero(35, d)};
    CHECK_THROWS_AS(embed(raw, {Vec3::Zero()}), InvalidArgument);
    CHECK_THROWS_AS(embed({Matrix::Zero(36, d)}, {}), InvalidArgument);
  }
}

TEST_CASE("attention") {
  Rng rng(3);
  SUBCASE("single token returns its value vector") {
    const Matrix h = random_matrix(1, 4, rng);
    const Matrix wv = random_matrix(4, 4, rng);
    const Matrix out = attention(h, random_matrix(4, 4, rng), random_matrix(4, 4, rng), wv);
    CHECK((out - h * wv).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("identical keys average the values") {
    const Matrix h = random_matrix(5, 4, rng);
    const Matrix out = attention(h, random_matrix(4, 4, rng), Matrix::Zero(4, 4), Matrix::Identity(4, 4));
    for (Index r = 0; r < 5; ++r) CHECK((out.row(r) - h.colwise().mean()).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("hand-computed T = 3, d = 2") {
    Matrix h(3, 2);
    h << 1, 0, 0, 1, 1, 1;
    const Matrix i2 = Matrix::Identity(2, 2);
    const Matrix out = attention(h, i2, i2, i2);
    // Row 0: logits (1, 0, 1) / sqrt 2.
    const double e1 = std::exp(1 / std::sqrt(2.0)), e0 = 1.0;
    const double z = 2 * e1 + e0;
    CHECK(out(0, 0) == doctest::Approx((e1 * 1 + e0 * 0 + e1 * 1) / z).epsilon(1e-14));
    CHECK(out(0, 1) == doctest::Approx((e1 * 0 + e0 * 1 + e1 * 1) / z).epsilon(1e-14));
    CHECK((out - ref_softmax_attention(h, h, h)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("output stays in the convex hull of values") {
    const Matrix h = random_matrix(6, 4, rng);
    const Matrix wv = random_matrix(4, 4, rng);
    const Matrix v = h * wv;
    const Matrix out = attention(h, random_matrix(4, 4, rng), random_matrix(4, 4, rng), wv);
    for (Index c = 0; c < 4; ++c) {
      CHECK(out.col(c).maxCoeff() <= v.col(c).maxCoeff() + 1e-12);
      CHECK(out.col(c).minCoeff() >= v.col(c).minCoeff() - 1e-12);
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(attention(Matrix::Zero(2, 3), Matrix::Zero(4, 4), Matrix::Zero(4, 4), Matrix::Zero(4, 4)),
                    InvalidArgument);
  }
}

TEST_CASE("multi-head decomposition") {
  Rng rng(4);
  auto params = EncoderParams::init(tiny_config(false), rng);
  auto& layer = params.layers[0];
  const Matrix h = random_matrix(5, 8, rng);

  layer.wout.value = Matrix::Identity(8, 8);
  const Matrix two = multi_head(h, layer, 2);
  for (int m = 0; m < 2; ++m) {
    const Matrix single = attention(h, layer.wq.value.middleCols(4 * m, 4), layer.wk.value.middleCols(4 * m, 4),
                                    layer.wv.value.middleCols(4 * m, 4));
    CHECK((two.middleCols(4 * m, 4) - single).cwiseAbs().maxCoeff() < 1e-14);
  }
  const Matrix one = multi_head(h, layer, 1);
  CHECK((one - attention(h, layer.wq.value, layer.wk.value, layer.wv.value)).cwiseAbs().maxCoeff() < 1e-14);
  for (int m : {1, 2, 4, 8}) CHECK(multi_head(h, layer, m).cols() == 8);
}

TEST_CASE("layer norm") {
  const RowVector ones = RowVector::Ones(4), zeros = RowVector::Zero(4);
  CHECK(layer_norm(RowVector::Constant(4, 3.0), ones, zeros).cwiseAbs().maxCoeff() == 0.0);
  RowVector two(2);
  two << 1, 3;
  const RowVector y = layer_norm(two, RowVector::Ones(2), RowVector::Zero(2));
  CHECK(y(0) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y(1) == doctest::Approx(1.0).epsilon(1e-5));
  Rng rng(5);
  const RowVector x = random_matrix(1, 16, rng, 3.0);
  const RowVector n = layer_norm(x, RowVector::Ones(16), RowVector::Zero(16));
  CHECK(std::abs(n.mean()) < 1e-9);
  CHECK(std::sqrt((n.array() - n.mean()).square().mean()) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ffn") {
  Rng rng(6);
  const RowVector x = random_matrix(1, 4, rng);
  CHECK(ffn(x, Matrix::Zero(4, 6), RowVector::Zero(6), Matrix::Zero(6, 4), RowVector::Zero(4)).norm() == 0.0);
  const RowVector b2 = random_matrix(1, 4, rng);
  CHECK(ffn(x, Matrix::Zero(4, 6), RowVector::Constant(6, -1.0), random_matrix(6, 4, rng), b2) == b2);
  const Matrix w1 = random_matrix(4, 6, rng), w2 = random_matrix(6, 4, rng);
  const Matrix b1 = random_matrix(1, 6, rng);
  const RowVector got = ffn(x, w1, b1, w2, b2);
  const Matrix want = ref_dense(ref_dense(x, w1, b1, true), w2, b2, false);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(ffn(x, Matrix::Zero(3, 6), RowVector::Zero(6), w2, b2), InvalidArgument);
}

TEST_CASE("encoder forward") {
  Rng rng(7);
  SUBCASE("zero layers is identity") {
    auto cfg = tiny_config(false);
    cfg.layers = 0;
    auto p = EncoderParams::init(cfg, rng);
    TokenSequence seq{random_matrix(10, 8, rng), {}};
    CHECK(encoder_forward(seq, p).hidden == seq.tokens);
  }
  SUBCASE("matches a loop reference and preserves shape") {
    auto p = EncoderParams::init(tiny_config(false), rng);
    TokenSequence seq{random_matrix(7, 8, rng), {}};
    const Matrix h = encoder_forward(seq, p).hidden;
    CHECK(h.rows() == 7);
    CHECK(h.cols() == 8);
    CHECK((h - ref_forward(seq.tokens, p)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("hand-set one-layer, T = 2, d = 2, M = 1") {
    auto cfg = tiny_config(false);
    cfg.layers = 1;
    cfg.embed_dim = 2;
    cfg.heads = 1;
    cfg.ffn_dim = 2;
    auto p = EncoderParams::init(cfg, rng);
    auto& l = p.layers[0];
    l.wq.value = Matrix::Identity(2, 2);
    l.wk.value = Matrix::Identity(2, 2);
    l.wv.value = Matrix::Identity(2, 2);
    l.wout.value = Matrix::Identity(2, 2);
    l.ffn->inner.weight.value = Matrix::Identity(2, 2);
    l.ffn->inner.bias.value.setZero();
    l.ffn->outer.weight.value = Matrix::Identity(2, 2);
    l.ffn->outer.bias.value.setZero();
    Matrix h(2, 2);
    h << 1, 0, 0, 2;
    // Attention logits / sqrt 2: row 0 (1, 0), row 1 (0, 4).
    const double s = std::sqrt(2.0);
    const double a00 = std::exp(1 / s) / (std::exp(1 / s) + 1), a11 = std::exp(4 / s) / (1 + std::exp(4 / s));
    Matrix a(2, 2);
    a << a00 * 1, (1 - a00) * 2, (1 - a11) * 1, a11 * 2;
    // Two-entry layer norm maps (x, y) to (sign(x - y), sign(y - x)) up to eps.
    auto ln2 = [](double x, double y) {
      const double half = (x - y) / 2;
      const double sd = std::sqrt(half * half + 1e-5);
      return std::pair<double, double>{half / sd, -half / sd};
    };
    Matrix u(2, 2), out(2, 2);
    for (int r = 0; r < 2; ++r) {
      auto [x, y] = ln2(a(r, 0) + h(r, 0), a(r, 1) + h(r, 1));
      u(r, 0) = x;
      u(r, 1) = y;
      auto [p0, p1] = ln2(std::max(x, 0.0) + x, std::max(y, 0.0) + y);
      out(r, 0) = p0;
      out(r, 1) = p1;
    }
    const Matrix got = encoder_forward(TokenSequence{h, {}}, p).hidden;
    CHECK((got - out).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("deterministic and returns routing for MoE layers") {
    auto p = EncoderParams::init(tiny_config(true), rng);
    TokenSequence seq{random_matrix(9, 8, rng), {}};
    const auto a = encoder_forward(seq, p);
    const auto b = encoder_forward(seq, p);
    CHECK(a.hidden == b.hidden);
    REQUIRE(a.routing.size() == 1);
    CHECK(a.routing[0].scores.rows() == 9);
  }
  SUBCASE("permutation equivariance of the attention core") {
    auto p = EncoderParams::init(tiny_config(false), rng);
    const Matrix x = random_matrix(6, 8, rng);
    std::vector<Index> perm{3, 0, 5, 1, 4, 2};
    Matrix xp(6, 8);
    for (Index r = 0; r < 6; ++r) xp.row(r) = x.row(perm[static_cast<std::size_t>(r)]);
    const Matrix h = encoder_forward(TokenSequence{x, {}}, p).hidden;
    const Matrix hp = encoder_forward(TokenSequence{xp, {}}, p).hidden;
    for (Index r = 0; r < 6; ++r) CHECK((hp.row(r) - h.row(perm[static_cast<std::size_t>(r)])).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("regress feature") {
  Rng rng(8);
  auto cfg = tiny_config(false);
  cfg.mlp_dim = 8;
  cfg.feature_dim = 8;
  auto p = EncoderParams::init(cfg, rng);
  SUBCASE("identity path for non-negative mean") {
    p.regress1.weight.value = Matrix::Identity(8, 8);
    p.regress1.bias.value.setZero();
    p.regress2.weight.value = Matrix::Identity(8, 8);
    p.regress2.bias.value.setZero();
    const Matrix h = random_matrix(5, 8, rng).cwiseAbs();
    const auto f = regress_feature(h, p);
    CHECK((f.values.transpose() - h.colwise().mean()).cwiseAbs().maxCoeff() < 1e-14);
    const auto single = regress_feature(h.topRows(1), p);
    CHECK((single.values.transpose() - h.row(0)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("loop reference") {
    const Matrix h = random_matrix(5, 8, rng);
    const Matrix mean = h.colwise().mean();
    const Matrix want = ref_dense(ref_dense(mean, p.regress1.weight.value, p.regress1.bias.value, true),
                                  p.regress2.weight.value, p.regress2.bias.value, false);
    CHECK((regress_feature(h, p).values.transpose() - want).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("encoder block gradients match finite differences") {
  Rng rng(9);
  auto p = EncoderParams::init(tiny_config(true), rng);
  const Matrix x = random_matrix(12, 8, rng);
  auto& layer = p.layers[0];

  SUBCASE("attention and multi-head") {
    for (int heads : {1, 2}) {
      const auto r = gradcheck::check({&layer.wq, &layer.wk, &layer.wv, &layer.wout}, [&](ad::Tape& t) {
        return project(multi_head(t, t.constant(x), layer, 6, heads));
      });
      INFO(r.worst);
      CHECK(r.max_rel < 1e-4);
    }
  }
  SUBCASE("layer norm and ffn") {
    const auto r = gradcheck::check(
        {&layer.ln2_gain, &layer.ln2_bias, &layer.ffn->inner.weight, &layer.ffn->inner.bias,
         &layer.ffn->outer.weight, &layer.ffn->outer.bias},
        [&](ad::Tape& t) {
          const ad::Var u = t.constant(x);
          return project(ad::layer_norm_rows(ad::add((*layer.ffn)(t, u), u), t.leaf(layer.ln2_gain),
                                             t.leaf(layer.ln2_bias), kLayerNormEps));
        });
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }
  SUBCASE("full encoder with regression head") {
    std::vector<ad::Parameter*> all;
    p.visit([&](ad::Parameter& q) { all.push_back(&q); });
    Matrix offsets = Matrix::Zero(72, 8);
    const Matrix patches = random_matrix(72, 9, rng, 0.3);
    const auto r = gradcheck::check(all, [&](ad::Tape& t) {
      return project(forward(t, p, embed_patches(t, p, patches, offsets), 36).features);
    }, 1e-5, 6);
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }
}

TEST_CASE("encoder config validation") {
  EncoderConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = EncoderConfig{};
  c.moe_layers = {5};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  Rng rng(1);
  auto p = EncoderParams::init(EncoderConfig{}, rng);
  CHECK(p.layers[1].experts.has_value());
  CHECK(p.layers[0].ffn.has_value());
  CHECK(p.parameter_count() > 0);
}
