#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "dbridge/core/array.hpp"
#include "dbridge/core/error.hpp"

namespace dbridge::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape keeps the node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

  inline const Array& value() const;
  inline Array grad() const;
  inline bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Records operations in construction order; backward() walks them in reverse.
// Leaf gradients accumulate across backward() calls until zero_grad().
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Array value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), Array(), requires_grad, true, false, nullptr});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }
  Var constant(Array value) { return leaf(std::move(value), false); }

  // Appends a derived node. The closure is dropped when no parent needs a gradient.
  Var record(Array value, std::initializer_list<Var> parents, Backward fn) {
    bool rg = false;
    for (const Var& p : parents) {
      if (p.tape() != this) throw UsageError("operands live on different tapes");
      rg = rg || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Array(), rg, false, false, rg ? std::move(fn) : nullptr});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }
  Var record(Array value, const std::vector<Var>& parents, Backward fn) {
    bool rg = false;
    for (const Var& p : parents) {
      if (p.tape() != this) throw UsageError("operands live on different tapes");
      rg = rg || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Array(), rg, false, false, rg ? std::move(fn) : nullptr});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const Array& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::uint32_t id) const { return nodes_[id].has_grad; }

  // Gradient buffer of a node, or nullptr when the node does not need one.
  Array* accum(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      if (n.grad.shape() == n.value.shape())
        std::fill(n.grad.values().begin(), n.grad.values().end(), 0.0);
      else
        n.grad = Array(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return &n.grad;
  }
  const Array& grad(std::uint32_t id) const { return nodes_[id].grad; }

  Array grad_or_zero(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.has_grad ? n.grad : Array(n.value.shape(), 0.0);
  }

  void backward(Var root) {
    if (root.tape() != this) throw UsageError("backward() root belongs to another tape");
    if (!nodes_[root.id()].value.is_scalar())
      throw UsageError("backward() needs a scalar root, got shape " + shape_string(nodes_[root.id()].value.shape()));
    for (auto& n : nodes_)
      if (!n.leaf) n.has_grad = false;
    if (!nodes_[root.id()].requires_grad) return;
    (*accum(root.id()))[0] += 1.0;
    for (std::int64_t id = root.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.leaf || !n.has_grad || !n.backward) continue;
      n.backward(*this, static_cast<std::uint32_t>(id));
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.has_grad = false;
  }

  std::size_t size() const { return nodes_.size(); }

  // Drops every node with id >= n (scratch reuse between independent evaluations).
  void truncate(std::size_t n) {
    if (n < nodes_.size()) nodes_.resize(n);
  }

 private:
  struct Node {
    Array value;
    Array grad;
    bool requires_grad;
    bool leaf;
    bool has_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

const Array& Var::value() const { return tape_->value(id_); }
Array Var::grad() const { return tape_->grad_or_zero(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace dbridge::ad
