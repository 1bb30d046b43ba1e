#include "doctest.h"
#include "gradcheck.hpp"

#include "rfrp/encoder.hpp"
#include "rfrp/moe.hpp"

#include <cmath>
#include <set>

using namespace rfrp;
using namespace rfrp::moe;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

void zero_expert(nn::Ffn& f) {
  f.visit([](ad::Parameter& p) { p.value.setZero(); });
}

Matrix run(ExpertSet& set, const Matrix& u, RoutingResult* routing = nullptr) {
  ad::Tape t;
  const Index d = u.cols();
  auto out = moe_forward(t, t.constant(u), set, t.constant(Matrix::Ones(1, d)), t.constant(Matrix::Zero(1, d)), 1e-5);
  if (routing) *routing = out.routing;
  return out.output.value();
}

Matrix layer_norm(const Matrix& x) {
  ad::Tape t;
  return ad::layer_norm_rows(t.constant(x), t.constant(Matrix::Ones(1, x.cols())),
                             t.constant(Matrix::Zero(1, x.cols())), 1e-5)
      .value();
}

Matrix eval_ffn(nn::Ffn& f, const Matrix& u) {
  ad::Tape t;
  return f(t, t.constant(u)).value();
}

}  // namespace

TEST_CASE("top-k with lowest-index tie break") {
  RowVector v(5);
  v << 0.1, 0.3, 0.3, 0.05, 0.25;
  CHECK(top_k_indices(v, 2) == std::vector<int>{1, 2});
  CHECK(top_k_indices(v, 3) == std::vector<int>{1, 2, 4});
  CHECK(top_k_indices(RowVector::Constant(4, 0.25), 2) == std::vector<int>{0, 1});
}

TEST_CASE("gate") {
  SUBCASE("identical centroids give uniform scores and the first K experts") {
    Rng rng(1);
    const Matrix row = random_matrix(1, 6, rng);
    Matrix centroids(15, 6);
    for (Index i = 0; i < 15; ++i) centroids.row(i) = row;
    const auto r = gate(random_matrix(4, 6, rng), centroids, 2);
    CHECK((r.scores.array() - 1.0 / 15).abs().maxCoeff() < 1e-15);
    for (const auto& sel : r.selected) CHECK(sel == std::vector<int>{0, 1});
  }
  SUBCASE("K equal to the optional count is dense") {
    Rng rng(2);
    const auto r = gate(random_matrix(5, 4, rng), random_matrix(3, 4, rng), 3);
    CHECK(r.gates == r.scores);
  }
  SUBCASE("hand-computed d = 2, three experts") {
    Matrix c(3, 2);
    c << 1, 0, 0, 1, -1, -1;
    Matrix u(1, 2);
    u << 0.5, 2.0;
    const auto r = gate(u, c, 2);
    const double a[3] = {0.5, 2.0, -2.5};
    const double z = std::exp(a[0]) + std::exp(a[1]) + std::exp(a[2]);
    for (int i = 0; i < 3; ++i) CHECK(r.scores(0, i) == doctest::Approx(std::exp(a[i]) / z).epsilon(1e-14));
    CHECK(r.selected[0] == std::vector<int>{1, 0});
    CHECK(r.gates(0, 2) == 0.0);
    CHECK(r.gates(0, 1) == r.scores(0, 1));
  }
  SUBCASE("exact-K sparsity and simplex scores") {
    Rng rng(3);
    const auto r = gate(random_matrix(50, 8, rng), random_matrix(6, 8, rng), 2);
    for (Index t = 0; t < 50; ++t) {
      int nonzero = 0;
      for (Index i = 0; i < 6; ++i) nonzero += r.gates(t, i) != 0.0 ? 1 : 0;
      CHECK(nonzero == 2);
      CHECK(std::abs(r.scores.row(t).sum() - 1.0) < 1e-12);
      CHECK(r.scores.row(t).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("sixteen experts, one shared, top-2 reach 105 optional pairs") {
  const int optional = 15;
  Matrix centroids = Matrix::Identity(optional, optional);
  std::set<std::vector<int>> reached;
  for (int a = 0; a < optional; ++a) {
    for (int b = a + 1; b < optional; ++b) {
      Matrix u = Matrix::Zero(1, optional);
      u(0, a) = 5.0;
      u(0, b) = 4.0;
      auto sel = gate(u, centroids, 2).selected[0];
      std::sort(sel.begin(), sel.end());
      reached.insert(sel);
    }
  }
  Rng rng(4);
  const auto r = gate(random_matrix(2000, optional, rng, 3.0), centroids, 2);
  for (auto sel : r.selected) {
    REQUIRE(sel.size() == 2);
    std::sort(sel.begin(), sel.end());
    CHECK(reached.count(sel) == 1);
  }
  CHECK(reached.size() == 105);
}

TEST_CASE("moe_forward special cases") {
  Rng rng(5);
  const Index d = 6;
  const Matrix u = random_matrix(7, d, rng);
  SUBCASE("zero optional experts leave the shared path") {
    ExpertSet set("m", {4, 1, 1}, d, 10, rng);
    for (int i = 1; i < 4; ++i) zero_expert(set.experts[static_cast<std::size_t>(i)]);
    const Matrix want = layer_norm(u + eval_ffn(set.experts[0], u));
    CHECK((run(set, u) - want).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("all experts zero") {
    ExpertSet set("m", {4, 1, 2}, d, 10, rng);
    for (auto& e : set.experts) zero_expert(e);
    CHECK((run(set, u) - layer_norm(u)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("dense evaluation equals sparse evaluation") {
    ExpertSet set("m", {5, 1, 2}, d, 10, rng);
    RoutingResult routing;
    const Matrix sparse = run(set, u, &routing);
    Matrix total = u + eval_ffn(set.experts[0], u);
    for (int i = 0; i < 4; ++i) {
      const Matrix y = eval_ffn(set.experts[static_cast<std::size_t>(1 + i)], u);
      for (Index t = 0; t < u.rows(); ++t) total.row(t) += routing.gates(t, i) * y.row(t);
    }
    CHECK((sparse - layer_norm(total)).cwiseAbs().maxCoeff() < 1e-13);
  }
  SUBCASE("single optional expert reduces to the plain FFN layer") {
    ExpertSet set("m", {1, 0, 1}, d, 10, rng);
    RoutingResult routing;
    const Matrix out = run(set, u, &routing);
    CHECK((routing.gates.array() == 1.0).all());
    CHECK((out - layer_norm(u + eval_ffn(set.experts[0], u))).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("invalid configurations") {
    CHECK_THROWS_AS(ExpertSet("m", {4, 4, 1}, d, 10, rng), InvalidArgument);
    CHECK_THROWS_AS(ExpertSet("m", {4, 1, 0}, d, 10, rng), InvalidArgument);
    CHECK_THROWS_AS(ExpertSet("m", {4, 1, 4}, d, 10, rng), InvalidArgument);
  }
}

TEST_CASE("balance loss closed forms") {
  const double lambda = 0.01;
  SUBCASE("uniform scores, balanced selection") {
    // T = 6 tokens over 3 optional experts with K = 1, two per expert.
    RoutingResult r = route(Matrix::Constant(6, 3, 1.0 / 3), 1);
    for (int t = 0; t < 6; ++t) r.selected[static_cast<std::size_t>(t)] = {t % 3};
    // Every frequency term is (3 / 6) * 2 = 1, every mean score 1/3.
    CHECK(balance_loss(r, 1, lambda) == doctest::Approx(lambda).epsilon(1e-14));
  }
  SUBCASE("collapse onto one expert with full score mass") {
    Matrix s = Matrix::Zero(5, 4);
    s.col(2).setOnes();
    for (int k : {1, 2}) {
      const RoutingResult r = route(s, k);
      CHECK(balance_loss(r, k, lambda) == doctest::Approx(lambda * 4 / k).epsilon(1e-14));
    }
  }
  SUBCASE("brute force: balanced assignments minimize the loss") {
    // T = 4, three optional experts, K = 1. Each token puts 0.6 on its chosen
    // expert and 0.2 on the others, so scores agree with the selection.
    double best = 1e300, worst_single = 0.0, best_unbalanced = 1e300;
    double balanced = -1.0;
    for (int code = 0; code < 81; ++code) {
      Matrix s = Matrix::Constant(4, 3, 0.2);
      std::vector<int> counts(3, 0);
      int c = code;
      for (int t = 0; t < 4; ++t, c /= 3) {
        s(t, c % 3) = 0.6;
        ++counts[static_cast<std::size_t>(c % 3)];
      }
      const double loss = balance_loss(route(s, 1), 1, 1.0);
      best = std::min(best, loss);
      const int mx = *std::max_element(counts.begin(), counts.end());
      if (mx == 2 && *std::min_element(counts.begin(), counts.end()) == 1) {
        if (balanced < 0) balanced = loss;
        CHECK(loss == doctest::Approx(balanced).epsilon(1e-14));
      } else {
        best_unbalanced = std::min(best_unbalanced, loss);
      }
      if (mx == 4) worst_single = std::max(worst_single, loss);
    }
    CHECK(balanced == doctest::Approx(best).epsilon(1e-14));
    CHECK(balanced < best_unbalanced);
    CHECK(balanced < worst_single);
  }
}

TEST_CASE("moe gradients match finite differences away from ties") {
  Rng rng(6);
  const Index d = 6;
  ExpertSet set("m", {4, 1, 2}, d, 8, rng);
  ad::Parameter u("u", random_matrix(9, d, rng));
  ad::Parameter gain("gain", Matrix::Ones(1, d));
  ad::Parameter bias("bias", Matrix::Zero(1, d));
  std::vector<ad::Parameter*> ps{&u, &gain, &bias};
  set.visit([&](ad::Parameter& p) { ps.push_back(&p); });

  // Make sure routing is not near a tie.
  const auto routing = gate(u.value, set.centroids.value, 2);
  for (Index t = 0; t < 9; ++t) {
    std::vector<double> s(routing.scores.row(t).data(), routing.scores.row(t).data() + 3);
    std::sort(s.begin(), s.end());
    REQUIRE(s[1] - s[0] > 1e-4);
  }

  Rng wr(7);
  const Matrix w = random_matrix(9, d, wr);
  const auto r = gradcheck::check(ps, [&](ad::Tape& t) {
    auto out = moe_forward(t, t.leaf(u), set, t.leaf(gain), t.leaf(bias), 1e-5);
    return ad::add(ad::weighted_sum(out.output, w), balance_loss(out.scores, out.routing, 2, 0.5));
  });
  INFO(r.worst);
  CHECK(r.max_rel < 1e-4);
}
