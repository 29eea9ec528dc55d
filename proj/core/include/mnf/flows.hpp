#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mnf/autodiff.hpp"
#include "mnf/rng.hpp"

namespace mnf {

// y = x W + b, W: [in, out].
struct AffineMap {
  Parameter weight;
  Parameter bias;

  std::size_t in() const { return weight.value.dim(0); }
  std::size_t out() const { return weight.value.dim(1); }
};

Var apply(Tape& tape, AffineMap& map, Var x);

// One masked affine step:
//   h = tanh(f(m * z));  mu = g(h);  sigma = sigmoid(k(h))
//   z' = m * z + (1 - m) * (z * sigma + (1 - sigma) * mu)
//   log|det dz'/dz| = sum((1 - m) * log sigma)
struct FlowStep {
  AffineMap f;  // dim -> hidden
  AffineMap g;  // hidden -> dim
  AffineMap k;  // hidden -> dim

  std::size_t dim() const { return f.in(); }
  std::size_t hidden() const { return f.out(); }
};

struct FlowStack {
  std::vector<FlowStep> steps;
  std::size_t dim = 0;

  std::size_t length() const { return steps.size(); }
};

// Sigmoid outputs are clamped to [kSigmaFloor, 1 - kSigmaFloor] before the log.
inline constexpr double kSigmaFloor = 1e-7;

// Near-identity start: f ~ N(0, 1/dim), g = 0, k weights 0 with bias +2.
FlowStep make_flow_step(const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng);
FlowStack make_flow_stack(const std::string& prefix, std::size_t dim, std::size_t length, std::size_t hidden,
                          Rng& rng);

// Binary masks, one [dim] tensor per step, in application order.
using MaskTrace = std::vector<Tensor>;

struct FlowResult {
  Var z;       // [dim]
  Var logdet;  // scalar
  MaskTrace masks;
};

FlowResult step_forward(Tape& tape, Var z, const Tensor& mask, FlowStep& step);
// Draws a fresh Bernoulli(0.5) mask per step from `rng`.
FlowResult stack_forward(Tape& tape, Var z0, FlowStack& stack, Rng& rng);
// Replays a recorded mask trace.
FlowResult stack_forward(Tape& tape, Var z0, FlowStack& stack, const MaskTrace& masks);

// sum_i [-0.5 log 2pi - 0.5 log_var_i - (z_i - mean_i)^2 / (2 exp(log_var_i))]
Var log_density_factorized_gaussian(Var z, Var mean, Var log_var);
double log_density_factorized_gaussian(std::span<const double> z, std::span<const double> mean,
                                       std::span<const double> log_var);

std::vector<Parameter*> parameters(FlowStack& stack);

}  // namespace mnf
