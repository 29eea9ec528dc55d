#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mnf/autodiff.hpp"
#include "mnf/flows.hpp"
#include "mnf/ops.hpp"
#include "mnf/rng.hpp"

namespace mnf {

// Upper bound on the conditional standard deviations used in the likelihood
// forward pass. KL terms always see the uncapped values.
struct SigmaCap {
  double alpha = std::numeric_limits<double>::infinity();

  SigmaCap() = default;
  explicit SigmaCap(double a);
  static SigmaCap none() { return SigmaCap{}; }
};

// Multiplicative-noise dense layer: q(W|z) = prod N(z_i mu_ij, sigma_ij^2),
// z = NF(z0), z0 ~ N(q_z0_mean, exp(q_z0_log_var)).
struct MnfDenseLayer {
  std::string name;
  Parameter mean;     // [in, out]
  Parameter log_var;  // [in, out]
  Parameter bias;     // [out]
  FlowStack q_flow;   // dim = in
  FlowStack r_flow;   // dim = in
  Parameter b1, b2, c;                    // [in]
  Parameter q_z0_mean, q_z0_log_var;      // [in]

  std::size_t in() const { return mean.value.dim(0); }
  std::size_t out() const { return mean.value.dim(1); }
  std::vector<Parameter*> parameters();
};

// Convolutional variant; z scales whole output filters.
struct MnfConvLayer {
  std::string name;
  Parameter mean;     // [KH, KW, C, F]
  Parameter log_var;  // [KH, KW, C, F]
  Parameter bias;     // [F]
  FlowStack q_flow;   // dim = F
  FlowStack r_flow;   // dim = F
  Parameter b1, b2, c;                // [F]
  Parameter q_z0_mean, q_z0_log_var;  // [F]
  ops::Padding padding = ops::Padding::valid;

  std::size_t filters() const { return mean.value.dim(3); }
  std::vector<Parameter*> parameters();
};

// Fully factorized Gaussian weights, additive parametrization. The same type
// serves the N(0, I)-prior (FFG) and log-uniform-prior (FFLU) models; the
// prior only matters to the objective.
struct GaussianDenseLayer {
  std::string name;
  Parameter mean;     // [in, out]
  Parameter log_var;  // [in, out]
  Parameter bias;     // [out]

  std::size_t in() const { return mean.value.dim(0); }
  std::size_t out() const { return mean.value.dim(1); }
  std::vector<Parameter*> parameters();
};

// Deterministic (delta-posterior) layers.
struct DenseLayer {
  std::string name;
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]

  std::size_t in() const { return weight.value.dim(0); }
  std::size_t out() const { return weight.value.dim(1); }
  std::vector<Parameter*> parameters();
};

struct ConvLayer {
  std::string name;
  Parameter weight;  // [KH, KW, C, F]
  Parameter bias;    // [F]
  ops::Padding padding = ops::Padding::valid;
  std::vector<Parameter*> parameters();
};

// Bernoulli multiplicative noise on activations. With a learnable rate the
// keep probability is sigmoid(logit).
struct DropoutLayer {
  std::string name;
  double keep_prob = 0.5;
  bool learnable = false;
  Parameter logit;  // scalar; only used when learnable

  std::vector<Parameter*> parameters();
};

struct MnfDenseInit {
  std::size_t in = 0, out = 0;
  std::size_t flow_q = 2, flow_r = 2;
  std::size_t hidden_q = 50, hidden_r = 100;
};

struct MnfConvInit {
  std::size_t kernel_h = 5, kernel_w = 5, channels = 1, filters = 20;
  std::size_t flow_q = 2, flow_r = 2;
  std::size_t hidden_q = 50, hidden_r = 100;
  ops::Padding padding = ops::Padding::valid;
};

// Means ~ He fan-in Gaussian N(0, 2/fan_in); log variances ~ N(-9, 1e-3^2);
// b1, b2, c ~ N(0, 0.01^2); q(z0) mean 1 and log variance -9; biases 0.
MnfDenseLayer make_mnf_dense(const std::string& name, const MnfDenseInit& init, Rng& rng);
MnfConvLayer make_mnf_conv(const std::string& name, const MnfConvInit& init, Rng& rng);
GaussianDenseLayer make_gaussian_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
DenseLayer make_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
ConvLayer make_conv(const std::string& name, std::size_t kh, std::size_t kw, std::size_t channels,
                    std::size_t filters, ops::Padding padding, Rng& rng);
DropoutLayer make_dropout(const std::string& name, double keep_prob, bool learnable);

// One draw of the multiplicative noise for a layer.
struct MnfNoiseSample {
  Var z0;
  Var z;        // z_Tf, [dim]
  Var logdet;   // sum of q-flow log-determinants
  MaskTrace masks;
};

MnfNoiseSample sample_mnf_noise(Tape& tape, Parameter& z0_mean, Parameter& z0_log_var, FlowStack& q_flow, Rng& rng);

struct MnfForward {
  Var activations;
  MnfNoiseSample noise;
};

// Local reparametrization with one z sample shared by the minibatch:
//   A = (H * z) M + sqrt(H^2 min(Sigma, alpha^2)) * E + bias.
MnfForward mnf_dense_forward(Tape& tape, Var h, MnfDenseLayer& layer, Rng& rng, SigmaCap cap);
// Same, for a caller-supplied z (used by oracles and the z-invariance checks).
Var mnf_dense_activations(Tape& tape, Var h, Var z, MnfDenseLayer& layer, Rng& rng, SigmaCap cap);

// A = H * (M * z) + sqrt(H^2 * min(Sigma, alpha^2)) * E + bias, NHWC.
MnfForward mnf_conv_forward(Tape& tape, Var h, MnfConvLayer& layer, Rng& rng, SigmaCap cap);
Var mnf_conv_activations(Tape& tape, Var h, Var z, MnfConvLayer& layer, Rng& rng, SigmaCap cap);

Var ffg_dense_forward(Tape& tape, Var h, GaussianDenseLayer& layer, Rng& rng, SigmaCap cap);
Var fflu_dense_forward(Tape& tape, Var h, GaussianDenseLayer& layer, Rng& rng);

Var dense_forward(Tape& tape, Var h, DenseLayer& layer);
Var conv_forward(Tape& tape, Var h, ConvLayer& layer);

enum class DropoutScaling { inverted, plain };

struct DropoutForward {
  Var activations;
  Var keep_prob;  // scalar Var (a constant unless the layer is learnable)
  Tensor mask;    // same shape as the input; empty when not stochastic
};

// Stochastic mode: A = H * m / pi (inverted) or H * m (plain), m ~ Bern(pi).
// Deterministic mode returns H unchanged.
DropoutForward dropout_forward(Tape& tape, Var h, DropoutLayer& layer, Rng& rng, bool stochastic,
                               DropoutScaling scaling = DropoutScaling::inverted);
// Fixed-rate convenience form.
Var dropout_forward(Tape& tape, Var h, double keep_prob, Rng& rng, bool stochastic);

// Explicit weight draws W_ij ~ N(z_i mu_ij, sigma_ij^2) (dense) or
// W_ijck ~ N(z_k mu_ijck, sigma_ijck^2) (conv), uncapped. For oracles.
Tensor sample_weights(const MnfDenseLayer& layer, std::span<const double> z, Rng& rng);
Tensor sample_weights(const MnfConvLayer& layer, std::span<const double> z, Rng& rng);
Tensor sample_weights(const GaussianDenseLayer& layer, Rng& rng);

}  // namespace mnf
