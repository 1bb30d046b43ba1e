#include "rfrp/moe.hpp"

#include <algorithm>
#include <numeric>

namespace rfrp::moe {

void MoeConfig::validate() const {
  require(shared >= 0 && shared < experts, "MoeConfig: need 0 <= N_s < N");
  require(top_k >= 1 && top_k <= optional(), "MoeConfig: need 1 <= K <= N - N_s");
}

ExpertSet::ExpertSet(const std::string& name, const MoeConfig& cfg, Index dim, Index hidden, Rng& rng)
    : config(cfg) {
  cfg.validate();
  experts.reserve(static_cast<std::size_t>(cfg.experts));
  for (int i = 0; i < cfg.experts; ++i) experts.emplace_back(name + ".expert" + std::to_string(i), dim, hidden, rng);
  centroids = ad::Parameter(name + ".centroids", nn::uniform_init(cfg.optional(), dim, dim, rng));
}

std::vector<long> RoutingResult::counts() const {
  std::vector<long> c(static_cast<std::size_t>(scores.cols()), 0);
  for (const auto& sel : selected) {
    for (int i : sel) ++c[static_cast<std::size_t>(i)];
  }
  return c;
}

std::vector<int> top_k_indices(const RowVector& values, int k) {
  std::vector<int> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), 0);
  const auto take = static_cast<std::size_t>(std::min<Index>(k, values.size()));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&values](int a, int b) { return values(a) > values(b) || (values(a) == values(b) && a < b); });
  order.resize(take);
  return order;
}

RoutingResult route(const Matrix& scores, int top_k) {
  RoutingResult r;
  r.scores = scores;
  r.gates = Matrix::Zero(scores.rows(), scores.cols());
  r.selected.resize(static_cast<std::size_t>(scores.rows()));
  for (Index t = 0; t < scores.rows(); ++t) {
    auto sel = top_k_indices(scores.row(t), top_k);
    for (int i : sel) r.gates(t, i) = scores(t, i);
    r.selected[static_cast<std::size_t>(t)] = std::move(sel);
  }
  return r;
}

RoutingResult gate(const Matrix& tokens, const Matrix& centroids, int top_k) {
  require(centroids.rows() > 0, "gate: no optional experts");
  require(tokens.cols() == centroids.cols(), "gate: token and centroid dimensions differ");
  ad::Tape tape;
  const ad::Var scores = ad::softmax_rows(ad::matmul_nt(tape.constant(tokens), tape.constant(centroids)));
  return route(scores.value(), top_k);
}

MoeOutput moe_forward(ad::Tape& tape, ad::Var tokens, ExpertSet& set, ad::Var ln_gain, ad::Var ln_bias,
                      double ln_eps) {
  const MoeConfig& cfg = set.config;
  cfg.validate();
  require(static_cast<int>(set.experts.size()) == cfg.experts, "moe_forward: expert count mismatch");
  const Index t_count = tokens.rows();

  const ad::Var scores = ad::softmax_rows(ad::matmul_nt(tokens, tape.leaf(set.centroids)));
  RoutingResult routing = route(scores.value(), cfg.top_k);

  // Constant 0/1 mask turns scores into gates inside the graph.
  Matrix mask = Matrix::Zero(routing.gates.rows(), routing.gates.cols());
  for (Index t = 0; t < t_count; ++t) {
    for (int i : routing.selected[static_cast<std::size_t>(t)]) mask(t, i) = 1.0;
  }
  const ad::Var gates = ad::hadamard(scores, tape.constant(std::move(mask)));

  std::vector<ad::Var> terms{tokens};
  for (int i = 0; i < cfg.shared; ++i) terms.push_back(set.experts[static_cast<std::size_t>(i)](tape, tokens));

  for (int i = 0; i < cfg.optional(); ++i) {
    std::vector<Index> rows;
    for (Index t = 0; t < t_count; ++t) {
      const auto& sel = routing.selected[static_cast<std::size_t>(t)];
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) rows.push_back(t);
    }
    if (rows.empty()) continue;
    auto& expert = set.experts[static_cast<std::size_t>(cfg.shared + i)];
    const ad::Var routed = ad::gather_rows(tokens, rows);
    const ad::Var g = ad::gather_rows(ad::slice_cols(gates, i, 1), rows);
    const ad::Var y = ad::mul_rows(expert(tape, routed), g);
    terms.push_back(ad::scatter_rows(y, rows, t_count));
  }

  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return {ad::layer_norm_rows(total, ln_gain, ln_bias, ln_eps), scores, std::move(routing)};
}

namespace {
Matrix balance_weights(const RoutingResult& routing, int top_k, double lambda) {
  const Index t_count = routing.scores.rows();
  const Index optional = routing.scores.cols();
  require(t_count >= 1, "balance_loss: need at least one token");
  const auto counts = routing.counts();
  const double t = static_cast<double>(t_count);
  Matrix w(t_count, optional);
  for (Index i = 0; i < optional; ++i) {
    const double frequency = static_cast<double>(optional) / (top_k * t) * static_cast<double>(counts[static_cast<std::size_t>(i)]);
    w.col(i).setConstant(lambda * frequency / t);
  }
  return w;
}
}  // namespace

double balance_loss(const RoutingResult& routing, int top_k, double lambda) {
  return routing.scores.cwiseProduct(balance_weights(routing, top_k, lambda)).sum();
}

ad::Var balance_loss(ad::Var scores, const RoutingResult& routing, int top_k, double lambda) {
  return ad::weighted_sum(scores, balance_weights(routing, top_k, lambda));
}

}  // namespace rfrp::moe
