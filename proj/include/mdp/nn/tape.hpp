#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mdp::nn {

template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode automatic differentiation over row-major matrices.
///
/// Nodes are appended in evaluation order, so a reverse sweep over node ids is
/// a valid topological order for back-propagation. Parameter leaves alias
/// external storage (no copy); their gradients are read out with
/// `for_each_param_grad` after `backward`.
template <class Real>
class Tape {
 public:
  using Matrix = Mat<Real>;
  using ConstMap = Eigen::Map<const Matrix>;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value) { return push(std::move(value), false); }
  /// A leaf that receives a gradient (used by tests and probes).
  Var input(Matrix value) { return push(std::move(value), record_); }

  /// Leaf aliasing `rows * cols` values at `data`; `slot` identifies it for
  /// gradient read-out.
  Var external(const Real* data, int rows, int cols, int slot, bool requires_grad) {
    Node n;
    n.ext = data;
    n.rows = rows;
    n.cols = cols;
    n.slot = slot;
    n.requires_grad = record_ && requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  ConstMap value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return ConstMap(n.ext ? n.ext : n.owned.data(), n.rows, n.cols);
  }
  int rows(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].rows; }
  int cols(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].cols; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Gradient of the last backward pass (zero matrix if none reached `v`).
  Matrix grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) return Matrix::Zero(n.rows, n.cols);
    return n.grad;
  }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Creates a result node. `back` runs during the reverse sweep with the
  /// node's accumulated output gradient.
  Var op(Matrix value, std::initializer_list<Var> inputs,
         std::function<void(Tape&, const Matrix&)> back) {
    bool rg = false;
    if (record_)
      for (Var in : inputs) rg = rg || requires_grad(in);
    Var out = push(std::move(value), rg);
    if (rg) nodes_[static_cast<std::size_t>(out.id)].backward = std::move(back);
    return out;
  }

  Var op_many(Matrix value, std::span<const Var> inputs,
              std::function<void(Tape&, const Matrix&)> back) {
    bool rg = false;
    if (record_)
      for (Var in : inputs) rg = rg || requires_grad(in);
    Var out = push(std::move(value), rg);
    if (rg) nodes_[static_cast<std::size_t>(out.id)].backward = std::move(back);
    return out;
  }

  /// Back-propagates from a 1x1 node.
  void backward(Var loss) {
    Node& root = nodes_[static_cast<std::size_t>(loss.id)];
    assert(root.rows == 1 && root.cols == 1);
    if (!root.requires_grad) return;
    root.grad = Matrix::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Calls fn(slot, grad) for every external leaf that received a gradient.
  template <class Fn>
  void for_each_param_grad(Fn&& fn) const {
    for (const Node& n : nodes_)
      if (n.slot >= 0 && n.grad.size() != 0) fn(n.slot, n.grad);
  }

 private:
  struct Node {
    Matrix owned;
    const Real* ext = nullptr;
    int rows = 0;
    int cols = 0;
    int slot = -1;
    bool requires_grad = false;
    Matrix grad;
    std::function<void(Tape&, const Matrix&)> backward;
  };

  Var push(Matrix value, bool requires_grad) {
    Node n;
    n.rows = static_cast<int>(value.rows());
    n.cols = static_cast<int>(value.cols());
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace mdp::nn
