#include "mnf/optim.hpp"

#include <cmath>

#include "mnf/errors.hpp"

namespace mnf {

AdamState make_adam_state(std::span<Parameter* const> params, const AdamConfig& config) {
  AdamState state{config, 0, {}, {}};
  for (const Parameter* p : params) {
    state.m.emplace_back(p->value.shape());
    state.v.emplace_back(p->value.shape());
  }
  return state;
}

void adam_step(std::span<Parameter* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ContractViolation("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->value.shape()) {
      throw ContractViolation("adam_step: gradient shape mismatch for " + params[i]->name);
    }
    if (!grads[i].all_finite()) throw NumericFault("adam", "non-finite gradient for parameter " + params[i]->name);
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->value.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

void adam_step(std::span<Parameter* const> params, const Gradients& grads, AdamState& state) {
  std::vector<Tensor> g;
  g.reserve(params.size());
  for (const Parameter* p : params) g.push_back(grads.of(*p));
  adam_step(params, g, state);
}

}  // namespace mnf
