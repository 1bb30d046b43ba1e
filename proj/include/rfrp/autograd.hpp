#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Every model block in the library is written once against this
// tape; a forward-only evaluation is the same graph without backward().

#include "rfrp/types.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace rfrp::ad {

/// A named trainable tensor with an accumulated gradient of the same shape.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Called with the gradient and value of the node's output; must route the
  // gradient to inputs through accumulate().
  using Backward = std::function<void(Tape&, const Matrix& grad, const Matrix& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a parameter; backward() adds into parameter.grad.
  Var leaf(Parameter& parameter);
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, const std::vector<Var>& inputs, Backward backward);

  /// Reverse sweep from a 1x1 root.
  void backward(Var root);

  void accumulate(Var target, const Matrix& gradient);
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].requires_grad; }
  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* parameter = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::deque<Node> nodes_;
};

// ---- elementwise and linear algebra ----
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var a, Var row);  // broadcast a 1 x c row over every row of a
Var mul_rows(Var a, Var column);  // row i of a scaled by column(i)
Var relu(Var a);
Var softplus(Var a);
Var exp(Var a);
Var square(Var a);

// ---- reductions ----
Var sum(Var a);
Var squared_norm(Var a);
Var weighted_sum(Var a, const Matrix& weights);  // sum(a .* weights), weights constant
Var segment_sum_rows(Var a, Index segment);
Var segment_mean_rows(Var a, Index segment);
Var segment_exclusive_cumsum_rows(Var a, Index segment);

// ---- normalization / attention ----
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps);
/// Multi-head scaled dot-product attention, fused. q, k, v are (S*T) x d with
/// head m occupying columns [m*d/M, (m+1)*d/M). Attention is restricted to
/// blocks of seq_len consecutive rows. Output is the head concatenation.
Var block_attention(Var q, Var k, Var v, Index seq_len, int heads);

// ---- shape ----
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Index start, Index count);
Var slice_rows(Var a, Index start, Index count);
Var gather_rows(Var a, const std::vector<Index>& rows);
Var scatter_rows(Var a, const std::vector<Index>& rows, Index total_rows);
Var reshape(Var a, Index rows, Index cols);  // row-major reinterpretation

// ---- complex values carried as (re, im) column pairs ----
Var complex_mul(Var a, Var b);
Var complex_exp(Var a);
Var complex_abs(Var a);  // n x 2 -> n x 1

}  // namespace rfrp::ad
