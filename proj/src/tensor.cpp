#include "fedmr/tensor.hpp"

#include "fedmr/errors.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace fedmr {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

void require_same_tape(const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape())
    throw ContractError("tensors belong to different tapes");
}

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

// Shape rule for binary elementwise ops.
void check_elementwise(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return;
  if (is_scalar(a) || is_scalar(b)) return;
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                       shape_str(b));
}

Matrix broadcast(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return Matrix::Constant(rows, cols, m(0, 0));
}

// Reduce a gradient computed at the broadcast shape back to the input shape.
Matrix unbroadcast(const Matrix& g, const Matrix& like) {
  if (g.rows() == like.rows() && g.cols() == like.cols()) return g;
  return Matrix::Constant(1, 1, g.sum());
}

void check_row(const char* op, const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError(std::string(op) + ": expected 1x" + std::to_string(a.cols()) +
                         " row, got " + shape_str(row));
}

}  // namespace

// --- Tensor ----------------------------------------------------------------

const Matrix& Tensor::value() const {
  if (!tape_) throw ContractError("use of an empty tensor handle");
  return tape_->value(id_);
}

const Matrix& Tensor::grad() const {
  if (!tape_) throw ContractError("use of an empty tensor handle");
  return tape_->grad(id_);
}

bool Tensor::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Scalar Tensor::item() const {
  const Matrix& v = value();
  if (!fedmr::is_scalar(v)) throw ContractError("item() on non-scalar tensor " + shape_str(v));
  return v(0, 0);
}

// --- Tape ------------------------------------------------------------------

Tensor Tape::leaf(Matrix value, bool requires_grad) {
  if (!value.allFinite()) throw NumericError("non-finite value in leaf tensor");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::scalar(Scalar v, bool requires_grad) {
  return leaf(Matrix::Constant(1, 1, v), requires_grad);
}

Tensor Tape::record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward) {
  if (!value.allFinite()) throw NumericError("operation produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.is_leaf = false;
  for (const Tensor& in : inputs) {
    if (in.tape() != this) throw ContractError("input tensor from another tape");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& delta) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = delta;
  else
    n.grad += delta;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (!loss.is_scalar())
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.value()));
  for (Node& n : nodes_)
    if (!n.is_leaf) n.grad.resize(0, 0);
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.is_leaf || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.grad.size() != 0) n.grad.setZero();
  }
}

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_elementwise("add", av, bv);
  const Index r = std::max(av.rows(), bv.rows());
  const Index c = std::max(av.cols(), bv.cols());
  Matrix out = broadcast(av, r, c) + broadcast(bv, r, c);
  const Tensor in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id()](Tape& t, const Matrix& g) {
    t.accumulate(ia, unbroadcast(g, t.value(ia)));
    t.accumulate(ib, unbroadcast(g, t.value(ib)));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_elementwise("sub", av, bv);
  const Index r = std::max(av.rows(), bv.rows());
  const Index c = std::max(av.cols(), bv.cols());
  Matrix out = broadcast(av, r, c) - broadcast(bv, r, c);
  const Tensor in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id()](Tape& t, const Matrix& g) {
    t.accumulate(ia, unbroadcast(g, t.value(ia)));
    t.accumulate(ib, unbroadcast(Matrix(-g), t.value(ib)));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_elementwise("mul", av, bv);
  const Index r = std::max(av.rows(), bv.rows());
  const Index c = std::max(av.cols(), bv.cols());
  Matrix out = broadcast(av, r, c).cwiseProduct(broadcast(bv, r, c));
  const Tensor in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id()](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    const Index r = g.rows(), c = g.cols();
    if (t.requires_grad(ia))
      t.accumulate(ia, unbroadcast(Matrix(g.cwiseProduct(broadcast(bv, r, c))), av));
    if (t.requires_grad(ib))
      t.accumulate(ib, unbroadcast(Matrix(g.cwiseProduct(broadcast(av, r, c))), bv));
  });
}

Tensor scale(const Tensor& a, Scalar s) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value() * s, in, [ia = a.id(), s](Tape& t, const Matrix& g) {
    t.accumulate(ia, g * s);
  });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value().array() + s, in,
                          [ia = a.id()](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  require_same_tape(a, row);
  check_row("add_rowwise", a.value(), row.value());
  Matrix out = a.value().rowwise() + row.value().row(0);
  const Tensor in[] = {a, row};
  return a.tape()->record(std::move(out), in,
                          [ia = a.id(), ir = row.id()](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g);
                            if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
                          });
}

Tensor sub_rowwise(const Tensor& a, const Tensor& row) {
  require_same_tape(a, row);
  check_row("sub_rowwise", a.value(), row.value());
  Matrix out = a.value().rowwise() - row.value().row(0);
  const Tensor in[] = {a, row};
  return a.tape()->record(std::move(out), in,
                          [ia = a.id(), ir = row.id()](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g);
                            if (t.requires_grad(ir)) t.accumulate(ir, -g.colwise().sum());
                          });
}

Tensor div_rowwise(const Tensor& a, const Tensor& row) {
  require_same_tape(a, row);
  check_row("div_rowwise", a.value(), row.value());
  Matrix out = a.value().array().rowwise() / row.value().row(0).array();
  const Tensor in[] = {a, row};
  return a.tape()->record(
      std::move(out), in, [ia = a.id(), ir = row.id()](Tape& t, const Matrix& g) {
        const Matrix& av = t.value(ia);
        const RowVector rv = t.value(ir).row(0);
        if (t.requires_grad(ia)) t.accumulate(ia, g.array().rowwise() / rv.array());
        if (t.requires_grad(ir)) {
          // d(a/r)/dr = -a / r^2
          RowVector dr = -(g.cwiseProduct(av)).colwise().sum().array() / rv.array().square();
          t.accumulate(ir, dr);
        }
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(av) + " x " +
                         shape_str(bv));
  Matrix out = av * bv;
  const Tensor in[] = {a, b};
  return a.tape()->record(std::move(out), in, [ia = a.id(), ib = b.id()](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Tensor transpose(const Tensor& a) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value().transpose(), in, [ia = a.id()](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.transpose());
  });
}

Tensor select_rows(const Tensor& a, std::span<const Index> rows) {
  const Matrix& av = a.value();
  Matrix out(static_cast<Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows())
      throw DimensionError("select_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_str(av));
    out.row(static_cast<Index>(i)) = av.row(rows[i]);
  }
  const Tensor in[] = {a};
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape()->record(std::move(out), in,
                          [ia = a.id(), idx = std::move(idx)](Tape& t, const Matrix& g) {
                            const Matrix& av = t.value(ia);
                            Matrix d = Matrix::Zero(av.rows(), av.cols());
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              d.row(idx[i]) += g.row(static_cast<Index>(i));
                            t.accumulate(ia, d);
                          });
}

Tensor relu(const Tensor& a) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value().cwiseMax(0.0), in, [ia = a.id()](Tape& t, const Matrix& g) {
    t.accumulate(ia, (t.value(ia).array() > 0.0).select(g, 0.0));
  });
}

Tensor max_zero(const Tensor& a) { return relu(a); }

Tensor clamp_min(const Tensor& a, Scalar floor) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value().cwiseMax(floor), in,
                          [ia = a.id(), floor](Tape& t, const Matrix& g) {
                            t.accumulate(ia, (t.value(ia).array() > floor).select(g, 0.0));
                          });
}

Tensor square(const Tensor& a) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value().array().square(), in, [ia = a.id()](Tape& t, const Matrix& g) {
    t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
  });
}

Tensor sqrt(const Tensor& a) {
  if ((a.value().array() < 0.0).any()) throw DomainError("sqrt of a negative value");
  const Tensor in[] = {a};
  Matrix out = a.value().cwiseSqrt();
  return a.tape()->record(std::move(out), in, [ia = a.id()](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix d(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j)
      for (Index i = 0; i < x.rows(); ++i)
        d(i, j) = x(i, j) > 0.0 ? g(i, j) * 0.5 / std::sqrt(x(i, j)) : 0.0;
    t.accumulate(ia, d);
  });
}

// --- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  const Tensor in[] = {a};
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), in,
                          [ia = a.id()](Tape& t, const Matrix& g) {
                            const Matrix& x = t.value(ia);
                            t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
                          });
}

Tensor mean(const Tensor& a) {
  const Index n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  const Tensor in[] = {a};
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum() / static_cast<Scalar>(n)), in,
                          [ia = a.id(), n](Tape& t, const Matrix& g) {
                            const Matrix& x = t.value(ia);
                            t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(),
                                                              g(0, 0) / static_cast<Scalar>(n)));
                          });
}

Tensor col_sum(const Tensor& a) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value().colwise().sum(), in, [ia = a.id()](Tape& t, const Matrix& g) {
    const Index n = t.value(ia).rows();
    t.accumulate(ia, g.row(0).replicate(n, 1));
  });
}

Tensor col_mean(const Tensor& a) {
  const Index n = a.value().rows();
  if (n == 0) throw DimensionError("col_mean over zero rows");
  return scale(col_sum(a), 1.0 / static_cast<Scalar>(n));
}

Tensor row_sum(const Tensor& a) {
  const Tensor in[] = {a};
  return a.tape()->record(a.value().rowwise().sum(), in, [ia = a.id()](Tape& t, const Matrix& g) {
    const Index m = t.value(ia).cols();
    t.accumulate(ia, g.col(0).replicate(1, m));
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  const Index n = z.rows();
  const Index classes = z.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  if (n == 0) throw DimensionError("softmax_cross_entropy on an empty batch");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw DomainError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(classes) + ")");

  // Row-wise log-softmax with max subtraction; probabilities are kept for backward.
  Matrix probs(n, classes);
  Scalar total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Scalar m = z.row(i).maxCoeff();
    const RowVector shifted = z.row(i).array() - m;
    const Scalar log_norm = std::log(shifted.array().exp().sum());
    probs.row(i) = (shifted.array() - log_norm).exp();
    total += log_norm - shifted(labels[static_cast<std::size_t>(i)]);
  }
  Labels y(labels.begin(), labels.end());
  const Tensor in[] = {logits};
  return logits.tape()->record(
      Matrix::Constant(1, 1, total / static_cast<Scalar>(n)), in,
      [il = logits.id(), probs = std::move(probs), y = std::move(y)](Tape& t, const Matrix& g) {
        Matrix d = probs;
        for (std::size_t i = 0; i < y.size(); ++i) d(static_cast<Index>(i), y[i]) -= 1.0;
        d *= g(0, 0) / static_cast<Scalar>(y.size());
        t.accumulate(il, d);
      });
}

}  // namespace fedmr
