#pragma once

#include "rfrp/autograd.hpp"
#include "rfrp/rng.hpp"

#include <string>

namespace rfrp::nn {

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
Matrix uniform_init(Index rows, Index cols, Index fan_in, Rng& rng);

/// y = x W + b with W stored in x out.
struct Dense {
  ad::Parameter weight;
  ad::Parameter bias;

  Dense() = default;
  Dense(const std::string& name, Index in, Index out, Rng& rng);

  Index in_dim() const { return weight.value.rows(); }
  Index out_dim() const { return weight.value.cols(); }
  ad::Var operator()(ad::Tape& tape, ad::Var x);

  template <class F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
};

/// ReLU(x W1 + b1) W2 + b2.
struct Ffn {
  Dense inner;
  Dense outer;

  Ffn() = default;
  Ffn(const std::string& name, Index dim, Index hidden, Rng& rng)
      : inner(name + ".w1", dim, hidden, rng), outer(name + ".w2", hidden, dim, rng) {}

  ad::Var operator()(ad::Tape& tape, ad::Var x) { return outer(tape, ad::relu(inner(tape, x))); }

  template <class F>
  void visit(F&& f) {
    inner.visit(f);
    outer.visit(f);
  }
};

}  // namespace rfrp::nn
