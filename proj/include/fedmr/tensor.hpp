#pragma once

// Minimal reverse-mode differentiation over dense f64 matrices.
//
// A Tape owns every node created while building an expression; a Tensor is a
// cheap handle (tape pointer + node index) into it. Nodes are appended in
// creation order, so the node list is already a topological order and
// backward() is a single reverse sweep.

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace fedmr {

using Scalar = double;
using Index = Eigen::Index;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Labels = std::vector<int>;

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  // Zero-sized until the first backward pass reaches this node.
  const Matrix& grad() const;
  bool requires_grad() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  Scalar item() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value, bool requires_grad = true);
  Tensor constant(Matrix value) { return leaf(std::move(value), false); }
  Tensor scalar(Scalar v, bool requires_grad = false);

  // Records an operation result. requires_grad is inherited from the inputs;
  // the backward closure is dropped when no input needs a gradient.
  Tensor record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Leaf gradients
  // accumulate across calls; interior gradients are recomputed each call.
  void backward(const Tensor& loss);
  void zero_grad();

  // Adds delta into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& delta);

  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool is_leaf = true;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

// --- elementwise and structural operations -------------------------------
//
// Binary elementwise ops accept identical shapes, or one side 1x1 (scalar
// with tensor). Row-wise variants combine an n x m tensor with a 1 x m row.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);

Tensor add_rowwise(const Tensor& a, const Tensor& row);
Tensor sub_rowwise(const Tensor& a, const Tensor& row);
Tensor div_rowwise(const Tensor& a, const Tensor& row);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor select_rows(const Tensor& a, std::span<const Index> rows);

Tensor relu(const Tensor& a);
// Hinge max(x, 0); the subgradient at exactly 0 is 0.
Tensor max_zero(const Tensor& a);
// max(x, floor); gradient passes only where x > floor.
Tensor clamp_min(const Tensor& a, Scalar floor);
Tensor square(const Tensor& a);
// Derivative at x == 0 is taken as 0 rather than +inf.
Tensor sqrt(const Tensor& a);

// --- reductions ----------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor col_sum(const Tensor& a);   // n x m -> 1 x m
Tensor col_mean(const Tensor& a);  // n x m -> 1 x m
Tensor row_sum(const Tensor& a);   // n x m -> n x 1

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace fedmr
