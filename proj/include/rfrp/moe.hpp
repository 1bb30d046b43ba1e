#pragma once

// Mixture-of-experts feed-forward block: N_s shared experts applied to every
// token plus Top-K routed optional experts chosen by centroid affinity.

#include "rfrp/autograd.hpp"
#include "rfrp/nn.hpp"

#include <vector>

namespace rfrp::moe {

struct MoeConfig {
  int experts = 4;  // N
  int shared = 1;   // N_s
  int top_k = 2;    // K

  int optional() const { return experts - shared; }
  void validate() const;
};

struct ExpertSet {
  MoeConfig config;
  std::vector<nn::Ffn> experts;  // shared experts first
  ad::Parameter centroids;       // (N - N_s) x d, one gate embedding per optional expert

  ExpertSet() = default;
  ExpertSet(const std::string& name, const MoeConfig& config, Index dim, Index hidden, Rng& rng);

  template <class F>
  void visit(F&& f) {
    for (auto& e : experts) e.visit(f);
    f(centroids);
  }
};

struct RoutingResult {
  Matrix scores;  // T x (N - N_s), rows on the probability simplex
  Matrix gates;   // scores where selected, zero elsewhere
  std::vector<std::vector<int>> selected;  // per token, ascending by rank

  /// Selection count per optional expert.
  std::vector<long> counts() const;
};

/// Indices of the k largest entries; ties go to the lower index.
std::vector<int> top_k_indices(const RowVector& values, int k);

/// Scores are softmax over optional experts of u_t . E_i; gates keep Top-K.
RoutingResult route(const Matrix& scores, int top_k);
RoutingResult gate(const Matrix& tokens, const Matrix& centroids, int top_k);

struct MoeOutput {
  ad::Var output;  // T x d
  ad::Var scores;  // T x (N - N_s), differentiable
  RoutingResult routing;
};

/// LayerNorm(u + sum shared FFN(u) + sum_i g_i FFN_i(u)), evaluating each
/// optional expert only on the tokens routed to it.
MoeOutput moe_forward(ad::Tape& tape, ad::Var tokens, ExpertSet& experts, ad::Var ln_gain, ad::Var ln_bias,
                      double ln_eps);

/// lambda * sum_i [(N-N_s)/(K T) * count_i] * [(1/T) sum_t s_{i,t}].
double balance_loss(const RoutingResult& routing, int top_k, double lambda);
/// Same value; differentiable through the scores with counts held constant.
ad::Var balance_loss(ad::Var scores, const RoutingResult& routing, int top_k, double lambda);

}  // namespace rfrp::moe
