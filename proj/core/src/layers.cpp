#include "mnf/layers.hpp"

#include <cmath>

#include "mnf/errors.hpp"

namespace mnf {

namespace {

Parameter gaussian_param(const std::string& name, Shape shape, double mean, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = mean + stddev * rng.normal();
  return Parameter{name, std::move(t)};
}

Parameter zeros_param(const std::string& name, Shape shape) { return Parameter{name, Tensor(std::move(shape))}; }

Var conditional_variance(Tape& tape, Parameter& log_var, SigmaCap cap) {
  Var var = ops::exp(tape.param(log_var));
  if (std::isfinite(cap.alpha)) var = ops::clamp(var, 0.0, cap.alpha * cap.alpha);
  return var;
}

void require_matrix_input(Var h, std::size_t in, const std::string& layer) {
  if (h.shape().size() != 2 || h.shape()[1] != in) {
    throw ContractViolation(layer + ": expected input [B, " + std::to_string(in) + "], got " + to_string(h.shape()));
  }
}

Var local_reparam_dense(Tape& tape, Var mean_in, Var h, Parameter& mean, Var variance, Parameter& bias, Rng& rng) {
  Var mh = ops::matmul(mean_in, tape.param(mean));
  Var vh = ops::matmul(ops::square(h), variance);
  Var noise = tape.constant(sample_normal(rng, vh.shape()));
  return mh + ops::sqrt(vh) * noise + tape.param(bias);
}

}  // namespace

SigmaCap::SigmaCap(double a) : alpha(a) {
  if (!(a > 0.0)) throw ContractViolation("sigma cap must be positive");
}

std::vector<Parameter*> MnfDenseLayer::parameters() {
  std::vector<Parameter*> out{&mean, &log_var, &bias};
  for (auto* p : mnf::parameters(q_flow)) out.push_back(p);
  for (auto* p : mnf::parameters(r_flow)) out.push_back(p);
  for (auto* p : {&b1, &b2, &c, &q_z0_mean, &q_z0_log_var}) out.push_back(p);
  return out;
}

std::vector<Parameter*> MnfConvLayer::parameters() {
  std::vector<Parameter*> out{&mean, &log_var, &bias};
  for (auto* p : mnf::parameters(q_flow)) out.push_back(p);
  for (auto* p : mnf::parameters(r_flow)) out.push_back(p);
  for (auto* p : {&b1, &b2, &c, &q_z0_mean, &q_z0_log_var}) out.push_back(p);
  return out;
}

std::vector<Parameter*> GaussianDenseLayer::parameters() { return {&mean, &log_var, &bias}; }
std::vector<Parameter*> DenseLayer::parameters() { return {&weight, &bias}; }
std::vector<Parameter*> ConvLayer::parameters() { return {&weight, &bias}; }

std::vector<Parameter*> DropoutLayer::parameters() {
  if (!learnable) return {};
  return {&logit};
}

MnfDenseLayer make_mnf_dense(const std::string& name, const MnfDenseInit& init, Rng& rng) {
  const std::size_t in = init.in, out = init.out;
  MnfDenseLayer layer;
  layer.name = name;
  layer.mean = gaussian_param(name + ".mean", {in, out}, 0.0, std::sqrt(2.0 / static_cast<double>(in)), rng);
  layer.log_var = gaussian_param(name + ".log_var", {in, out}, -9.0, 1e-3, rng);
  layer.bias = zeros_param(name + ".bias", {out});
  layer.q_flow = make_flow_stack(name + ".q_flow", in, init.flow_q, init.hidden_q, rng);
  layer.r_flow = make_flow_stack(name + ".r_flow", in, init.flow_r, init.hidden_r, rng);
  layer.b1 = gaussian_param(name + ".b1", {in}, 0.0, 0.01, rng);
  layer.b2 = gaussian_param(name + ".b2", {in}, 0.0, 0.01, rng);
  layer.c = gaussian_param(name + ".c", {in}, 0.0, 0.01, rng);
  layer.q_z0_mean = Parameter{name + ".q_z0_mean", Tensor(Shape{in}, 1.0)};
  layer.q_z0_log_var = Parameter{name + ".q_z0_log_var", Tensor(Shape{in}, -9.0)};
  return layer;
}

MnfConvLayer make_mnf_conv(const std::string& name, const MnfConvInit& init, Rng& rng) {
  const Shape kshape{init.kernel_h, init.kernel_w, init.channels, init.filters};
  const double fan_in = static_cast<double>(init.kernel_h * init.kernel_w * init.channels);
  const std::size_t f = init.filters;
  MnfConvLayer layer;
  layer.name = name;
  layer.padding = init.padding;
  layer.mean = gaussian_param(name + ".mean", kshape, 0.0, std::sqrt(2.0 / fan_in), rng);
  layer.log_var = gaussian_param(name + ".log_var", kshape, -9.0, 1e-3, rng);
  layer.bias = zeros_param(name + ".bias", {f});
  layer.q_flow = make_flow_stack(name + ".q_flow", f, init.flow_q, init.hidden_q, rng);
  layer.r_flow = make_flow_stack(name + ".r_flow", f, init.flow_r, init.hidden_r, rng);
  layer.b1 = gaussian_param(name + ".b1", {f}, 0.0, 0.01, rng);
  layer.b2 = gaussian_param(name + ".b2", {f}, 0.0, 0.01, rng);
  layer.c = gaussian_param(name + ".c", {f}, 0.0, 0.01, rng);
  layer.q_z0_mean = Parameter{name + ".q_z0_mean", Tensor(Shape{f}, 1.0)};
  layer.q_z0_log_var = Parameter{name + ".q_z0_log_var", Tensor(Shape{f}, -9.0)};
  return layer;
}

GaussianDenseLayer make_gaussian_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  GaussianDenseLayer layer;
  layer.name = name;
  layer.mean = gaussian_param(name + ".mean", {in, out}, 0.0, std::sqrt(2.0 / static_cast<double>(in)), rng);
  layer.log_var = gaussian_param(name + ".log_var", {in, out}, -9.0, 1e-3, rng);
  layer.bias = zeros_param(name + ".bias", {out});
  return layer;
}

DenseLayer make_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer layer;
  layer.name = name;
  layer.weight = gaussian_param(name + ".weight", {in, out}, 0.0, std::sqrt(2.0 / static_cast<double>(in)), rng);
  layer.bias = zeros_param(name + ".bias", {out});
  return layer;
}

ConvLayer make_conv(const std::string& name, std::size_t kh, std::size_t kw, std::size_t channels,
                    std::size_t filters, ops::Padding padding, Rng& rng) {
  ConvLayer layer;
  layer.name = name;
  layer.padding = padding;
  const double fan_in = static_cast<double>(kh * kw * channels);
  layer.weight = gaussian_param(name + ".weight", {kh, kw, channels, filters}, 0.0, std::sqrt(2.0 / fan_in), rng);
  layer.bias = zeros_param(name + ".bias", {filters});
  return layer;
}

DropoutLayer make_dropout(const std::string& name, double keep_prob, bool learnable) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ContractViolation("dropout keep probability must lie in (0, 1]");
  DropoutLayer layer;
  layer.name = name;
  layer.keep_prob = keep_prob;
  layer.learnable = learnable;
  const double clamped = std::min(keep_prob, 1.0 - 1e-3);
  layer.logit = Parameter{name + ".logit", Tensor::scalar(std::log(clamped / (1.0 - clamped)))};
  return layer;
}

MnfNoiseSample sample_mnf_noise(Tape& tape, Parameter& z0_mean, Parameter& z0_log_var, FlowStack& q_flow, Rng& rng) {
  const Shape shape = z0_mean.value.shape();
  Var eps = tape.constant(sample_normal(rng, shape));
  Var z0 = tape.param(z0_mean) + ops::exp(0.5 * tape.param(z0_log_var)) * eps;
  auto flow = stack_forward(tape, z0, q_flow, rng);
  return MnfNoiseSample{z0, flow.z, flow.logdet, std::move(flow.masks)};
}

Var mnf_dense_activations(Tape& tape, Var h, Var z, MnfDenseLayer& layer, Rng& rng, SigmaCap cap) {
  require_matrix_input(h, layer.in(), layer.name);
  if (z.size() != layer.in()) throw ContractViolation(layer.name + ": z has shape " + to_string(z.shape()));
  Var variance = conditional_variance(tape, layer.log_var, cap);
  return local_reparam_dense(tape, h * z, h, layer.mean, variance, layer.bias, rng);
}

MnfForward mnf_dense_forward(Tape& tape, Var h, MnfDenseLayer& layer, Rng& rng, SigmaCap cap) {
  require_matrix_input(h, layer.in(), layer.name);
  auto noise = sample_mnf_noise(tape, layer.q_z0_mean, layer.q_z0_log_var, layer.q_flow, rng);
  Var a = mnf_dense_activations(tape, h, noise.z, layer, rng, cap);
  return MnfForward{a, std::move(noise)};
}

Var mnf_conv_activations(Tape& tape, Var h, Var z, MnfConvLayer& layer, Rng& rng, SigmaCap cap) {
  if (z.size() != layer.filters()) throw ContractViolation(layer.name + ": z has shape " + to_string(z.shape()));
  Var scaled_kernel = tape.param(layer.mean) * z;
  Var mh = ops::conv2d(h, scaled_kernel, layer.padding);
  Var vh = ops::conv2d(ops::square(h), conditional_variance(tape, layer.log_var, cap), layer.padding);
  Var noise = tape.constant(sample_normal(rng, vh.shape()));
  return mh + ops::sqrt(vh) * noise + tape.param(layer.bias);
}

MnfForward mnf_conv_forward(Tape& tape, Var h, MnfConvLayer& layer, Rng& rng, SigmaCap cap) {
  auto noise = sample_mnf_noise(tape, layer.q_z0_mean, layer.q_z0_log_var, layer.q_flow, rng);
  Var a = mnf_conv_activations(tape, h, noise.z, layer, rng, cap);
  return MnfForward{a, std::move(noise)};
}

Var ffg_dense_forward(Tape& tape, Var h, GaussianDenseLayer& layer, Rng& rng, SigmaCap cap) {
  require_matrix_input(h, layer.in(), layer.name);
  return local_reparam_dense(tape, h, h, layer.mean, conditional_variance(tape, layer.log_var, cap), layer.bias, rng);
}

Var fflu_dense_forward(Tape& tape, Var h, GaussianDenseLayer& layer, Rng& rng) {
  return ffg_dense_forward(tape, h, layer, rng, SigmaCap::none());
}

Var dense_forward(Tape& tape, Var h, DenseLayer& layer) {
  require_matrix_input(h, layer.in(), layer.name);
  return ops::matmul(h, tape.param(layer.weight)) + tape.param(layer.bias);
}

Var conv_forward(Tape& tape, Var h, ConvLayer& layer) {
  return ops::conv2d(h, tape.param(layer.weight), layer.padding) + tape.param(layer.bias);
}

DropoutForward dropout_forward(Tape& tape, Var h, DropoutLayer& layer, Rng& rng, bool stochastic,
                               DropoutScaling scaling) {
  Var keep = layer.learnable ? ops::sigmoid(tape.param(layer.logit)) : tape.constant(Tensor::scalar(layer.keep_prob));
  const double p = keep.item();
  if (!(p > 0.0 && p <= 1.0)) throw ContractViolation(layer.name + ": keep probability must lie in (0, 1]");
  if (!stochastic) return DropoutForward{h, keep, Tensor{}};
  Tensor mask = sample_bernoulli(rng, p, h.shape());
  Var masked = h * tape.constant(mask);
  Var a = scaling == DropoutScaling::inverted ? masked / keep : masked;
  return DropoutForward{a, keep, std::move(mask)};
}

Var dropout_forward(Tape& tape, Var h, double keep_prob, Rng& rng, bool stochastic) {
  DropoutLayer layer = make_dropout("dropout", keep_prob, false);
  return dropout_forward(tape, h, layer, rng, stochastic).activations;
}

Tensor sample_weights(const MnfDenseLayer& layer, std::span<const double> z, Rng& rng) {
  const std::size_t in = layer.in(), out = layer.out();
  if (z.size() != in) throw ContractViolation(layer.name + ": z length " + std::to_string(z.size()));
  Tensor w(Shape{in, out});
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      const double sd = std::exp(0.5 * layer.log_var.value.at(i, j));
      w.at(i, j) = z[i] * layer.mean.value.at(i, j) + sd * rng.normal();
    }
  }
  return w;
}

Tensor sample_weights(const MnfConvLayer& layer, std::span<const double> z, Rng& rng) {
  const std::size_t f = layer.filters();
  if (z.size() != f) throw ContractViolation(layer.name + ": z length " + std::to_string(z.size()));
  Tensor w(layer.mean.value.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double sd = std::exp(0.5 * layer.log_var.value[i]);
    w[i] = z[i % f] * layer.mean.value[i] + sd * rng.normal();
  }
  return w;
}

Tensor sample_weights(const GaussianDenseLayer& layer, Rng& rng) {
  Tensor w(layer.mean.value.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = layer.mean.value[i] + std::exp(0.5 * layer.log_var.value[i]) * rng.normal();
  }
  return w;
}

}  // namespace mnf
