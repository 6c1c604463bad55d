#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab {

struct ValueId {
  std::int32_t index = -1;
  bool valid() const { return index >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which makes the
// node list a topological order; backward() sweeps it once in reverse.
// Parameter leaves accumulate their gradients into the bound tensor's grad
// buffer, so two backward passes add up until the caller zeroes the grads.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, ValueId)>;

  // Leaf bound to an external parameter tensor; its gradient lands in
  // t's grad buffer. trainable=false freezes it (no gradient is produced,
  // and nothing downstream computes one just for it).
  ValueId param(Tensor& t, bool trainable = true);
  // Leaf holding a constant. Never receives a gradient.
  ValueId input(Tensor value);
  // Interior node. `backward` reads the node's own gradient and accumulates
  // into its inputs; it is skipped entirely when no input needs a gradient.
  ValueId append(Tensor value, std::vector<ValueId> inputs, BackwardFn backward);

  // References stay valid as the graph grows (node storage is a deque).
  const Tensor& value(ValueId id) const;
  double scalar_value(ValueId id) const;
  bool requires_grad(ValueId id) const;
  std::size_t size() const { return nodes_.size(); }

  bool has_grad(ValueId id) const;
  ConstVecMap grad_vec(ValueId id) const;
  ConstMatMap grad_mat(ValueId id) const;
  // Accumulation views; allocate a zero buffer on first touch.
  VecMap grad_acc_vec(ValueId id);
  MatMap grad_acc_mat(ValueId id);

  // Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse. The root
  // must hold a finite scalar. Interior gradients reset on every call; bound
  // parameter gradients accumulate.
  void backward(ValueId root);

 private:
  struct Node {
    Tensor value;  // empty when bound
    Tensor* bound = nullptr;
    Tensor grad;  // interior gradient, lazily allocated
    std::vector<ValueId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Node& node(ValueId id);
  const Node& node(ValueId id) const;

  std::deque<Node> nodes_;
};

// Binds each parameter tensor into a graph at most once, consulting a
// trainability predicate so frozen parameters enter as constants.
class Binder {
 public:
  Binder(Graph& g, std::function<bool(const Tensor*)> trainable)
      : g_(g), trainable_(std::move(trainable)) {}

  static Binder all_trainable(Graph& g) {
    return Binder(g, [](const Tensor*) { return true; });
  }
  static Binder all_frozen(Graph& g) {
    return Binder(g, [](const Tensor*) { return false; });
  }

  ValueId operator()(Tensor& t) {
    auto it = bound_.find(&t);
    if (it != bound_.end()) return it->second;
    const ValueId id = g_.param(t, trainable_(&t));
    bound_.emplace(&t, id);
    return id;
  }

  Graph& graph() { return g_; }

 private:
  Graph& g_;
  std::function<bool(const Tensor*)> trainable_;
  std::unordered_map<const Tensor*, ValueId> bound_;
};

inline constexpr double kLayerNormEps = 1e-5;

// Primitive ops. Shapes are validated eagerly; messages name both shapes.
ValueId matmul(Graph& g, ValueId a, ValueId b);
ValueId add(Graph& g, ValueId a, ValueId b);
// x is [T x d]; bias is rank-1 [d], added to every row.
ValueId add_row_bias(Graph& g, ValueId x, ValueId bias);
ValueId scale(Graph& g, ValueId x, double c);
// Exact form x * Phi(x) with Phi the standard normal CDF.
ValueId gelu(Graph& g, ValueId x);
// Stable (max-subtracted) softmax along `axis`. Rank 1: axis 0 over the
// whole vector. Rank 2: axis 1 per row, axis 0 per column.
ValueId softmax(Graph& g, ValueId x, int axis);
ValueId log_softmax_rows(Graph& g, ValueId x);
// Per-row normalization with learned gain and bias; population variance,
// epsilon inside the square root.
ValueId layer_norm(Graph& g, ValueId x, ValueId gain, ValueId bias);
ValueId transpose(Graph& g, ValueId x);
ValueId concat_rows(Graph& g, ValueId a, ValueId b);
ValueId concat_cols(Graph& g, ValueId a, ValueId b);
ValueId slice_rows(Graph& g, ValueId x, Index r0, Index r1);
ValueId slice_cols(Graph& g, ValueId x, Index c0, Index c1);
// [T x d] -> [1 x d] column means.
ValueId mean_rows(Graph& g, ValueId x);
// Copy of x with the listed rows replaced by `row` (rank-1, length d).
ValueId replace_rows(Graph& g, ValueId x, const std::vector<int>& rows, ValueId row);
// Minimum of two scalars; the gradient follows the smaller one (ties: a).
ValueId min2(Graph& g, ValueId a, ValueId b);
// sum_i weights[i] * terms[i]; weights is rank-1 of length terms.size().
ValueId weighted_combine(Graph& g, ValueId weights, const std::vector<ValueId>& terms);
// Mean squared error over the listed rows only; other rows never contribute.
ValueId masked_mse(Graph& g, ValueId pred, const Tensor& target, const std::vector<int>& rows);

// Central-difference gradient check. `build` reconstructs the computation
// from the current parameter values (binding every tensor in `params`) and
// returns the scalar root. Returns the maximum relative error
// |a - n| / max(1, |a|, |n|) over all parameter components.
double grad_check(const std::function<ValueId(Graph&)>& build,
                  const std::vector<Tensor*>& params, double h = 1e-6);

}  // namespace peftlab
