#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rhrn/parameter.hpp"
#include "rhrn/tensor.hpp"

namespace rhrn {

using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

template <typename Scalar>
class Tape;

/// A tensor value plus its optional position on a tape. Vars without a tape
/// node are constants: operations on constants only are computed eagerly and
/// leave no trace on any tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tensor<Scalar> value)  // NOLINT: implicit on purpose
      : value_(std::make_shared<const Tensor<Scalar>>(std::move(value))) {}
  explicit Var(std::shared_ptr<const Tensor<Scalar>> value) : value_(std::move(value)) {}

  bool defined() const { return value_ != nullptr; }
  const Tensor<Scalar>& value() const { return *value_; }
  const std::shared_ptr<const Tensor<Scalar>>& shared() const { return value_; }
  const Shape& shape() const { return value_->shape(); }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape<Scalar>* tape() const { return tape_; }
  NodeId node() const { return node_; }

 private:
  friend class Tape<Scalar>;
  std::shared_ptr<const Tensor<Scalar>> value_;
  Tape<Scalar>* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

template <typename Scalar>
struct Gradients {
  std::unordered_map<const Parameter<Scalar>*, Tensor<Scalar>> params;
  std::unordered_map<NodeId, Tensor<Scalar>> leaves;
  std::size_t visited_nodes = 0;

  const Tensor<Scalar>* find(const Parameter<Scalar>& p) const {
    auto it = params.find(&p);
    return it == params.end() ? nullptr : &it->second;
  }
  const Tensor<Scalar>& of(const Var<Scalar>& leaf) const { return leaves.at(leaf.node()); }
};

/// Append-only record of differentiable operations. Single owner; one
/// backward pass per tape.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using BackwardFn = std::function<void(const TensorT& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Binds a parameter. Frozen parameters and buffers come back as constants.
  Var<Scalar> watch(const Parameter<Scalar>& p) {
    Var<Scalar> v(std::shared_ptr<const TensorT>(p.value));
    if (!p.trainable()) return v;
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    NodeId id = push(Node{v.shared(), {}, nullptr, "parameter", &p});
    watched_.push_back(&p);
    Var<Scalar> bound = attach(std::move(v), id);
    bound_.emplace(&p, bound);
    return bound;
  }

  /// A requires_grad leaf that is not a model parameter.
  Var<Scalar> variable(TensorT value) {
    Var<Scalar> v(std::move(value));
    NodeId id = push(Node{v.shared(), {}, nullptr, "variable", nullptr});
    return attach(std::move(v), id);
  }

  /// Records an operation result. Parent ids of kNoNode are constants.
  Var<Scalar> record(TensorT value, std::vector<NodeId> parents, BackwardFn fn, const char* op) {
    Var<Scalar> v(std::move(value));
    for (NodeId p : parents) {
      if (p >= static_cast<NodeId>(nodes_.size()))
        throw ValidationError("tape parent does not precede its child");
    }
    NodeId id = push(Node{v.shared(), std::move(parents), std::move(fn), op, nullptr});
    return attach(std::move(v), id);
  }

  /// Adds g into the gradient slot of node id. Only valid during backward.
  void accumulate(NodeId id, TensorT g) {
    if (id == kNoNode) return;
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot) {
      slot = std::move(g);
    } else {
      if (slot->shape() != g.shape())
        throw ValidationError("gradient shape " + g.shape().str() + " does not match " +
                              slot->shape().str());
      slot->array() += g.array();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// Bytes held by recorded operation outputs, each distinct buffer once.
  /// Parameter and variable leaves are not counted.
  std::size_t retained_bytes() const {
    std::unordered_map<const TensorT*, std::size_t> seen;
    for (const Node& n : nodes_) {
      if (n.backward) seen.emplace(n.value.get(), static_cast<std::size_t>(n.value->numel()) * sizeof(Scalar));
    }
    std::size_t total = 0;
    for (const auto& [ptr, bytes] : seen) total += bytes;
    return total;
  }
  bool consumed() const { return consumed_; }
  const char* op_name(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].op; }

  Gradients<Scalar> backward(const Var<Scalar>& loss);

 private:
  struct Node {
    std::shared_ptr<const TensorT> value;
    std::vector<NodeId> parents;
    BackwardFn backward;
    const char* op;
    const Parameter<Scalar>* param;
  };

  NodeId push(Node node) {
    if (consumed_) throw ValidationError("tape is frozen: backward already ran");
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }
  Var<Scalar> attach(Var<Scalar> v, NodeId id) {
    v.tape_ = this;
    v.node_ = id;
    return v;
  }

  std::vector<Node> nodes_;
  std::vector<const Parameter<Scalar>*> watched_;
  std::unordered_map<const Parameter<Scalar>*, Var<Scalar>> bound_;
  std::vector<std::optional<TensorT>> grads_;
  bool consumed_ = false;
};

template <typename Scalar>
Gradients<Scalar> Tape<Scalar>::backward(const Var<Scalar>& loss) {
  if (consumed_) throw ValidationError("backward called twice on one tape");
  if (loss.tape() != this) throw ValidationError("loss does not live on this tape");
  if (loss.value().numel() != 1) {
    throw ValidationError("backward needs a scalar loss, got shape " + loss.shape().str());
  }
  consumed_ = true;

  const auto count = static_cast<std::size_t>(loss.node()) + 1;
  std::vector<char> reachable(count, 0);
  reachable[count - 1] = 1;
  for (std::size_t i = count; i-- > 0;) {
    if (!reachable[i]) continue;
    for (NodeId p : nodes_[i].parents)
      if (p != kNoNode) reachable[static_cast<std::size_t>(p)] = 1;
  }

  grads_.assign(nodes_.size(), std::nullopt);
  grads_[count - 1] = TensorT::constant(loss.shape(), Scalar(1));

  Gradients<Scalar> result;
  for (std::size_t i = count; i-- > 0;) {
    if (!reachable[i]) continue;
    ++result.visited_nodes;
    Node& node = nodes_[i];
    if (!grads_[i]) grads_[i] = TensorT::zeros(node.value->shape());
    if (node.backward) {
      node.backward(*grads_[i], *this);
      grads_[i].reset();
    } else if (node.param != nullptr) {
      result.params.emplace(node.param, std::move(*grads_[i]));
    } else {
      result.leaves.emplace(static_cast<NodeId>(i), std::move(*grads_[i]));
    }
  }
  for (const Parameter<Scalar>* p : watched_) {
    if (!result.params.count(p)) result.params.emplace(p, TensorT::zeros(p->shape()));
  }
  grads_.clear();
  return result;
}

}  // namespace rhrn
