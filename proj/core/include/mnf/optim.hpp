#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mnf/autodiff.hpp"

namespace mnf {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments mirror the parameter shapes, in the order given at construction.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> m, v;
};

AdamState make_adam_state(std::span<Parameter* const> params, const AdamConfig& config = {});

// One bias-corrected descent step. A non-finite gradient throws NumericFault
// naming the parameter, before anything is modified.
void adam_step(std::span<Parameter* const> params, std::span<const Tensor> grads, AdamState& state);
void adam_step(std::span<Parameter* const> params, const Gradients& grads, AdamState& state);

}  // namespace mnf
