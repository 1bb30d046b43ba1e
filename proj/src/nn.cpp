#include "rfrp/nn.hpp"

#include <cmath>

namespace rfrp::nn {

Matrix uniform_init(Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

Dense::Dense(const std::string& name, Index in, Index out, Rng& rng)
    : weight(name + ".weight", uniform_init(in, out, in, rng)), bias(name + ".bias", uniform_init(1, out, in, rng)) {}

ad::Var Dense::operator()(ad::Tape& tape, ad::Var x) {
  return ad::add_row(ad::matmul(x, tape.leaf(weight)), tape.leaf(bias));
}

}  // namespace rfrp::nn
