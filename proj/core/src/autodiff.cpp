#include "mnf/autodiff.hpp"

#include "mnf/errors.hpp"

namespace mnf {

const Tensor& Var::value() const {
  if (!tape_) throw ContractViolation("use of an empty Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

bool GradSink::wants(Var v) const { return v.valid() && tape_.requires_grad(v.id()); }

Tensor& GradSink::at(Var v) {
  auto& g = grads_[v.id()];
  if (g.size() == 0) g = Tensor(tape_.value(v.id()).shape());
  return g;
}

const Tensor& Gradients::of(Var v) const {
  if (v.id() < grads_.size() && grads_[v.id()].size() != 0) return grads_[v.id()];
  zeros_.push_back(Tensor(v.shape()));
  return zeros_.back();
}

bool Gradients::contains(const Parameter& p) const {
  return tape_ && tape_->param_ids_.count(&p) != 0;
}

const Tensor& Gradients::of(const Parameter& p) const {
  if (!tape_) throw ContractViolation("empty gradient table");
  auto it = tape_->param_ids_.find(&p);
  if (it == tape_->param_ids_.end()) {
    zeros_.push_back(Tensor(p.value.shape()));
    return zeros_.back();
  }
  const auto& g = grads_[it->second];
  if (g.size() != 0) return g;
  zeros_.push_back(Tensor(p.value.shape()));
  return zeros_.back();
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericFault("constant", "non-finite input");
  return push(Node{std::move(value), {}, "constant", nullptr, false});
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericFault("leaf", "non-finite input");
  return push(Node{std::move(value), {}, "leaf", nullptr, true});
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  if (!p.value.all_finite()) throw NumericFault("parameter " + p.name, "non-finite value");
  Var v = push(Node{p.value, {}, "param", &p, true});
  param_ids_.emplace(&p, v.id());
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> parents, Pullback pullback) {
  bool needs_grad = false;
  for (const auto& p : parents) {
    if (p.tape_ != this) throw ContractViolation(std::string(op) + ": operand from a different tape");
    needs_grad = needs_grad || nodes_[p.id_].requires_grad;
  }
  if (!value.all_finite()) throw NumericFault(std::string(op), "non-finite output");
  return push(Node{std::move(value), needs_grad ? std::move(pullback) : Pullback{}, op, nullptr, needs_grad});
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape_ != this) throw ContractViolation("backward: loss recorded on a different tape");
  if (loss.value().size() != 1) {
    throw ContractViolation("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  if (!nodes_[loss.id_].requires_grad) return out;

  out.grads_[loss.id_] = Tensor(loss.shape(), 1.0);
  GradSink sink(*this, out.grads_);
  for (std::uint32_t i = loss.id_ + 1; i-- > 0;) {
    const auto& node = nodes_[i];
    auto& g = out.grads_[i];
    if (!node.requires_grad || g.size() == 0) continue;
    if (!g.all_finite()) throw NumericFault(std::string(node.op), "non-finite gradient");
    if (node.pullback) node.pullback(node.value, g, sink);
  }
  return out;
}

}  // namespace mnf
