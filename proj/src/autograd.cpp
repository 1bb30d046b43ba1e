#include "rfrp/autograd.hpp"

#include <cmath>
#include <memory>

namespace rfrp::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Parameter& parameter) {
  Node node;
  node.value = parameter.value;
  node.parameter = &parameter;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::push(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw InvalidArgument("autograd: operand belongs to a different tape");
    node.requires_grad = node.requires_grad || requires_grad(in);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(Var target, const Matrix& gradient) {
  Node& node = nodes_[static_cast<std::size_t>(target.id_)];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = gradient;
    node.has_grad = true;
  } else {
    node.grad += gradient;
  }
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw InvalidArgument("autograd: root belongs to a different tape");
  Node& r = nodes_[static_cast<std::size_t>(root.id_)];
  if (r.value.size() != 1) throw InvalidArgument("autograd: backward root must be 1x1");
  if (!r.requires_grad) return;
  accumulate(root, Matrix::Ones(1, 1));
  for (std::size_t i = static_cast<std::size_t>(root.id_) + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad) continue;
    if (node.parameter != nullptr) {
      node.parameter->grad += node.grad;
    } else if (node.backward) {
      node.backward(*this, node.grad, node.value);
    }
    node.grad.resize(0, 0);
    node.has_grad = false;
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw InvalidArgument("matmul_nt: inner dimension mismatch");
  Matrix out = a.value() * b.value().transpose();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape()->push(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape()->push(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, -g);
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double factor) {
  return a.tape()->push(a.value() * factor, {a},
                        [a, factor](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * factor); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InvalidArgument("add_row: row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var mul_rows(Var a, Var column) {
  if (column.cols() != 1 || column.rows() != a.rows()) throw InvalidArgument("mul_rows: column shape mismatch");
  Matrix out = a.value().array().colwise() * column.value().col(0).array();
  return a.tape()->push(std::move(out), {a, column}, [a, column](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) {
      Matrix ga = g.array().colwise() * column.value().col(0).array();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(column)) {
      Matrix gc = g.cwiseProduct(a.value()).rowwise().sum();
      t.accumulate(column, gc);
    }
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga = (a.value().array() > 0.0).select(g, 0.0);
    t.accumulate(a, ga);
  });
}

Var softplus(Var a) {
  Matrix out = a.value().unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    Matrix sig = a.value().unaryExpr([](double x) {
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    t.accumulate(a, g.cwiseProduct(sig));
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  return a.tape()->push(std::move(out), {a},
                        [a](Tape& t, const Matrix& g, const Matrix& out) { t.accumulate(a, g.cwiseProduct(out)); });
}

Var square(Var a) {
  Matrix out = a.value().array().square().matrix();
  return a.tape()->push(std::move(out), {a},
                        [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, 2.0 * g.cwiseProduct(a.value())); });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var squared_norm(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape()->push(std::move(out), {a},
                        [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, (2.0 * g(0, 0)) * a.value()); });
}

Var weighted_sum(Var a, const Matrix& weights) {
  if (weights.rows() != a.rows() || weights.cols() != a.cols()) throw InvalidArgument("weighted_sum: shape mismatch");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return a.tape()->push(std::move(out), {a},
                        [a, weights](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g(0, 0) * weights); });
}

namespace {
void require_segments(const Var& a, Index segment, const char* op) {
  if (segment <= 0 || a.rows() % segment != 0) {
    throw InvalidArgument(std::string(op) + ": rows not divisible by segment length");
  }
}
}  // namespace

Var segment_sum_rows(Var a, Index segment) {
  require_segments(a, segment, "segment_sum_rows");
  const Index groups = a.rows() / segment;
  Matrix out = Matrix::Zero(groups, a.cols());
  const Matrix& x = a.value();
  for (Index gi = 0; gi < groups; ++gi) out.row(gi) = x.middleRows(gi * segment, segment).colwise().sum();
  return a.tape()->push(std::move(out), {a}, [a, segment](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    for (Index gi = 0; gi < g.rows(); ++gi) ga.middleRows(gi * segment, segment).rowwise() = g.row(gi);
    t.accumulate(a, ga);
  });
}

Var segment_mean_rows(Var a, Index segment) {
  return scale(segment_sum_rows(a, segment), 1.0 / static_cast<double>(segment));
}

Var segment_exclusive_cumsum_rows(Var a, Index segment) {
  require_segments(a, segment, "segment_exclusive_cumsum_rows");
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index base = 0; base < x.rows(); base += segment) {
    out.row(base).setZero();
    for (Index m = 1; m < segment; ++m) out.row(base + m) = out.row(base + m - 1) + x.row(base + m - 1);
  }
  return a.tape()->push(std::move(out), {a}, [a, segment](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga(g.rows(), g.cols());
    for (Index base = 0; base < g.rows(); base += segment) {
      ga.row(base + segment - 1).setZero();
      for (Index m = segment - 1; m-- > 0;) ga.row(base + m) = ga.row(base + m + 1) + g.row(base + m + 1);
    }
    t.accumulate(a, ga);
  });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& p) {
    Matrix ga(p.rows(), p.cols());
    for (Index r = 0; r < p.rows(); ++r) {
      const double dot = g.row(r).dot(p.row(r));
      ga.row(r) = p.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(a, ga);
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw InvalidArgument("layer_norm_rows: gain/bias must be 1 x d");
  }
  const Matrix& xv = x.value();
  auto xhat = std::make_shared<Matrix>(xv.rows(), d);
  auto inv_std = std::make_shared<Vector>(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mean).matrix() * (*inv_std)(r);
  }
  Matrix out = (xhat->array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return x.tape()->push(std::move(out), {x, gain, bias},
                        [x, gain, bias, xhat, inv_std](Tape& t, const Matrix& g, const Matrix&) {
                          if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(*xhat).colwise().sum());
                          if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                          if (t.requires_grad(x)) {
                            const Index dd = g.cols();
                            Matrix dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
                            Matrix gx(g.rows(), dd);
                            for (Index r = 0; r < g.rows(); ++r) {
                              const double m1 = dxhat.row(r).mean();
                              const double m2 = dxhat.row(r).dot(xhat->row(r)) / static_cast<double>(dd);
                              gx.row(r) = (*inv_std)(r) *
                                          (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2).matrix();
                            }
                            t.accumulate(x, gx);
                          }
                        });
}

Var block_attention(Var q, Var k, Var v, Index seq_len, int heads) {
  require_same_shape(q, k, "block_attention");
  require_same_shape(q, v, "block_attention");
  const Index d = q.cols();
  if (heads <= 0 || d % heads != 0) throw InvalidArgument("block_attention: d must be divisible by heads");
  require_segments(q, seq_len, "block_attention");
  const Index dk = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
  const Index blocks = q.rows() / seq_len;
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(blocks * heads));
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  Matrix out(q.rows(), d);
  for (Index b = 0; b < blocks; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto qb = Q.block(b * seq_len, h * dk, seq_len, dk);
      auto kb = K.block(b * seq_len, h * dk, seq_len, dk);
      auto vb = V.block(b * seq_len, h * dk, seq_len, dk);
      Matrix s = (qb * kb.transpose()) * scale_factor;
      for (Index r = 0; r < seq_len; ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      out.block(b * seq_len, h * dk, seq_len, dk) = s * vb;
      probs->push_back(std::move(s));
    }
  }
  return q.tape()->push(
      std::move(out), {q, k, v},
      [q, k, v, seq_len, heads, dk, scale_factor, blocks, probs](Tape& t, const Matrix& g, const Matrix&) {
        const Matrix& Q = q.value();
        const Matrix& K = k.value();
        const Matrix& V = v.value();
        Matrix gq = Matrix::Zero(Q.rows(), Q.cols());
        Matrix gk = Matrix::Zero(K.rows(), K.cols());
        Matrix gv = Matrix::Zero(V.rows(), V.cols());
        for (Index b = 0; b < blocks; ++b) {
          for (int h = 0; h < heads; ++h) {
            const Matrix& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
            auto go = g.block(b * seq_len, h * dk, seq_len, dk);
            auto qb = Q.block(b * seq_len, h * dk, seq_len, dk);
            auto kb = K.block(b * seq_len, h * dk, seq_len, dk);
            auto vb = V.block(b * seq_len, h * dk, seq_len, dk);
            gv.block(b * seq_len, h * dk, seq_len, dk) = p.transpose() * go;
            Matrix dp = go * vb.transpose();
            Matrix ds(seq_len, seq_len);
            for (Index r = 0; r < seq_len; ++r) {
              const double dot = dp.row(r).dot(p.row(r));
              ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
            }
            ds *= scale_factor;
            gq.block(b * seq_len, h * dk, seq_len, dk) = ds * kb;
            gk.block(b * seq_len, h * dk, seq_len, dk) = ds.transpose() * qb;
          }
        }
        t.accumulate(q, gq);
        t.accumulate(k, gk);
        t.accumulate(v, gv);
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no operands");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InvalidArgument("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape()->push(std::move(out), parts, [parts](Tape& t, const Matrix& g, const Matrix&) {
    Index col = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(col, p.cols()));
      col += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no operands");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw InvalidArgument("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape()->push(std::move(out), parts, [parts](Tape& t, const Matrix& g, const Matrix&) {
    Index row = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(row, p.rows()));
      row += p.rows();
    }
  });
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw InvalidArgument("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return a.tape()->push(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(start, count) = g;
    t.accumulate(a, ga);
  });
}

Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw InvalidArgument("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return a.tape()->push(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleRows(start, count) = g;
    t.accumulate(a, ga);
  });
}

Var gather_rows(Var a, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  const Matrix& x = a.value();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw InvalidArgument("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = x.row(rows[i]);
  }
  return a.tape()->push(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
    t.accumulate(a, ga);
  });
}

Var scatter_rows(Var a, const std::vector<Index>& rows, Index total_rows) {
  if (static_cast<Index>(rows.size()) != a.rows()) throw InvalidArgument("scatter_rows: index count mismatch");
  Matrix out = Matrix::Zero(total_rows, a.cols());
  const Matrix& x = a.value();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= total_rows) throw InvalidArgument("scatter_rows: index out of range");
    out.row(rows[i]) += x.row(static_cast<Index>(i));
  }
  return a.tape()->push(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(static_cast<Index>(i)) = g.row(rows[i]);
    t.accumulate(a, ga);
  });
}

Var reshape(Var a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw InvalidArgument("reshape: element count mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga = Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols());
    t.accumulate(a, ga);
  });
}

namespace {
void require_complex(const Var& a, const char* op) {
  if (a.cols() != 2) throw InvalidArgument(std::string(op) + ": expected n x 2 (re, im) operand");
}
}  // namespace

Var complex_mul(Var a, Var b) {
  require_complex(a, "complex_mul");
  require_same_shape(a, b, "complex_mul");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix out(x.rows(), 2);
  out.col(0) = x.col(0).cwiseProduct(y.col(0)) - x.col(1).cwiseProduct(y.col(1));
  out.col(1) = x.col(0).cwiseProduct(y.col(1)) + x.col(1).cwiseProduct(y.col(0));
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    // d/dz of (z w) under the real pairing: grad_z = g * conj(w)
    auto grad_of = [&g](const Matrix& w) {
      Matrix r(g.rows(), 2);
      r.col(0) = g.col(0).cwiseProduct(w.col(0)) + g.col(1).cwiseProduct(w.col(1));
      r.col(1) = -g.col(0).cwiseProduct(w.col(1)) + g.col(1).cwiseProduct(w.col(0));
      return r;
    };
    if (t.requires_grad(a)) t.accumulate(a, grad_of(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, grad_of(a.value()));
  });
}

Var complex_exp(Var a) {
  require_complex(a, "complex_exp");
  const Matrix& x = a.value();
  Matrix out(x.rows(), 2);
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = std::exp(x(i, 0));
    out(i, 0) = m * std::cos(x(i, 1));
    out(i, 1) = m * std::sin(x(i, 1));
  }
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& e) {
    Matrix ga(g.rows(), 2);
    ga.col(0) = g.col(0).cwiseProduct(e.col(0)) + g.col(1).cwiseProduct(e.col(1));
    ga.col(1) = -g.col(0).cwiseProduct(e.col(1)) + g.col(1).cwiseProduct(e.col(0));
    t.accumulate(a, ga);
  });
}

Var complex_abs(Var a) {
  require_complex(a, "complex_abs");
  Matrix out = a.value().rowwise().norm();
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& mag) {
    const Matrix& x = a.value();
    Matrix ga(x.rows(), 2);
    for (Index i = 0; i < x.rows(); ++i) {
      if (mag(i, 0) > 0.0) {
        ga(i, 0) = g(i, 0) * x(i, 0) / mag(i, 0);
        ga(i, 1) = g(i, 0) * x(i, 1) / mag(i, 0);
      } else {
        ga(i, 0) = 0.0;
        ga(i, 1) = 0.0;
      }
    }
    t.accumulate(a, ga);
  });
}

}  // namespace rfrp::ad
