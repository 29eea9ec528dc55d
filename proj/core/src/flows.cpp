#include "mnf/flows.hpp"

#include <cmath>
#include <numbers>

#include "mnf/errors.hpp"
#include "mnf/ops.hpp"

namespace mnf {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

AffineMap make_map(const std::string& name, std::size_t in, std::size_t out) {
  return AffineMap{Parameter{name + ".weight", Tensor(Shape{in, out})}, Parameter{name + ".bias", Tensor(Shape{out})}};
}

}  // namespace

Var apply(Tape& tape, AffineMap& map, Var x) {
  const std::size_t in = map.in();
  if (x.size() != in) {
    throw ContractViolation("affine map expects " + std::to_string(in) + " inputs, got shape " + to_string(x.shape()));
  }
  Var row = ops::reshape(x, Shape{1, in});
  Var y = ops::matmul(row, tape.param(map.weight));
  return ops::reshape(y, Shape{map.out()}) + tape.param(map.bias);
}

FlowStep make_flow_step(const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng) {
  FlowStep step{make_map(prefix + ".f", dim, hidden), make_map(prefix + ".g", hidden, dim),
                make_map(prefix + ".k", hidden, dim)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& w : step.f.weight.value.data()) w = scale * rng.normal();
  step.k.bias.value.fill(2.0);
  return step;
}

FlowStack make_flow_stack(const std::string& prefix, std::size_t dim, std::size_t length, std::size_t hidden,
                          Rng& rng) {
  FlowStack stack;
  stack.dim = dim;
  for (std::size_t t = 0; t < length; ++t) {
    stack.steps.push_back(make_flow_step(prefix + "." + std::to_string(t), dim, hidden, rng));
  }
  return stack;
}

FlowResult step_forward(Tape& tape, Var z, const Tensor& mask, FlowStep& step) {
  const std::size_t dim = step.dim();
  if (z.size() != dim || mask.size() != dim) {
    throw ContractViolation("flow step of dim " + std::to_string(dim) + " got z " + to_string(z.shape()) +
                            ", mask " + to_string(mask.shape()));
  }
  Tensor keep(Shape{dim});
  for (std::size_t i = 0; i < dim; ++i) {
    const double m = mask[i];
    if (m != 0.0 && m != 1.0) throw ContractViolation("flow mask entries must be 0 or 1");
    keep[i] = 1.0 - m;
  }
  Var m = tape.constant(mask.reshaped(Shape{dim}));
  Var one_minus_m = tape.constant(std::move(keep));
  Var zv = ops::reshape(z, Shape{dim});

  Var masked = m * zv;
  Var h = ops::tanh(apply(tape, step.f, masked));
  Var mu = apply(tape, step.g, h);
  Var sigma = ops::clamp(ops::sigmoid(apply(tape, step.k, h)), kSigmaFloor, 1.0 - kSigmaFloor);

  Var moved = zv * sigma + (1.0 - sigma) * mu;
  Var z_next = masked + one_minus_m * moved;
  Var logdet = ops::sum(one_minus_m * ops::log(sigma));
  return FlowResult{z_next, logdet, {mask.reshaped(Shape{dim})}};
}

FlowResult stack_forward(Tape& tape, Var z0, FlowStack& stack, Rng& rng) {
  MaskTrace masks;
  masks.reserve(stack.length());
  for (std::size_t t = 0; t < stack.length(); ++t) masks.push_back(sample_bernoulli(rng, 0.5, Shape{stack.dim}));
  return stack_forward(tape, z0, stack, masks);
}

FlowResult stack_forward(Tape& tape, Var z0, FlowStack& stack, const MaskTrace& masks) {
  if (masks.size() != stack.length()) {
    throw ContractViolation("mask trace has " + std::to_string(masks.size()) + " entries for a flow of length " +
                            std::to_string(stack.length()));
  }
  FlowResult result{z0, tape.constant(Tensor::scalar(0.0)), {}};
  for (std::size_t t = 0; t < stack.length(); ++t) {
    auto step = step_forward(tape, result.z, masks[t], stack.steps[t]);
    result.z = step.z;
    result.logdet = result.logdet + step.logdet;
  }
  result.masks = masks;
  return result;
}

Var log_density_factorized_gaussian(Var z, Var mean, Var log_var) {
  if (z.shape() != mean.shape() || z.shape() != log_var.shape()) {
    throw ContractViolation("gaussian log-density shape mismatch: z " + to_string(z.shape()) + ", mean " +
                            to_string(mean.shape()) + ", log_var " + to_string(log_var.shape()));
  }
  Var resid = ops::square(z - mean);
  Var terms = -0.5 * log_var - 0.5 * resid / ops::exp(log_var);
  return ops::sum(terms) - kHalfLog2Pi * static_cast<double>(z.size());
}

double log_density_factorized_gaussian(std::span<const double> z, std::span<const double> mean,
                                       std::span<const double> log_var) {
  if (z.size() != mean.size() || z.size() != log_var.size()) {
    throw ContractViolation("gaussian log-density length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - mean[i];
    total += -kHalfLog2Pi - 0.5 * log_var[i] - d * d / (2.0 * std::exp(log_var[i]));
  }
  return total;
}

std::vector<Parameter*> parameters(FlowStack& stack) {
  std::vector<Parameter*> out;
  for (auto& s : stack.steps) {
    for (AffineMap* m : {&s.f, &s.g, &s.k}) {
      out.push_back(&m->weight);
      out.push_back(&m->bias);
    }
  }
  return out;
}

}  // namespace mnf
