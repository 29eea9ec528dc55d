#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mnf/tensor.hpp"

namespace mnf {

// A named trainable array. Models own these; a Tape only borrows them while
// a graph is alive, and the optimizer is the only writer between passes.
struct Parameter {
  std::string name;
  Tensor value;
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Gradients;

// Per-backward scratch handed to each node's pullback.
class GradSink {
 public:
  bool wants(Var v) const;
  // Accumulator for `v`, zero-initialised on first touch.
  Tensor& at(Var v);

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<Tensor>& grads) : tape_(tape), grads_(grads) {}

  const Tape& tape_;
  std::vector<Tensor>& grads_;
};

// Result of Tape::backward. Entries that received no contribution read as zeros.
class Gradients {
 public:
  const Tensor& of(Var v) const;
  const Tensor& of(const Parameter& p) const;
  bool contains(const Parameter& p) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
  mutable std::deque<Tensor> zeros_;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// every parent precedes its children and a reverse sweep is a valid
// topological order. backward() never mutates the tape: calling it twice on
// the same graph yields identical gradients.
class Tape {
 public:
  using Pullback = std::function<void(const Tensor& out, const Tensor& grad_out, GradSink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Detached input: never receives gradient.
  Var constant(Tensor value);
  // Free leaf that receives gradient but is not bound to a Parameter (e.g. an input image for FGSM).
  Var leaf(Tensor value);
  // Leaf bound to `p`; repeated calls within one tape return the same node.
  Var param(Parameter& p);

  // Appends a primitive result. Throws NumericFault if `value` has a non-finite entry.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> parents, Pullback pullback);

  Gradients backward(Var loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(std::uint32_t id) const { return nodes_[id].op; }

 private:
  friend class Gradients;

  struct Node {
    Tensor value;
    Pullback pullback;
    std::string_view op;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_ids_;
};

}  // namespace mnf
