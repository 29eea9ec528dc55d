#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mnf/model.hpp"

namespace mnf {

// KL(q(W|z) || N(0, I)) = 1/2 sum(sigma^2 + z^2 mu^2 - 1 - log sigma^2), with
// z indexing the input axis (dense) or the filter axis (conv). Uncapped.
Var kl_conditional_gaussian(Tape& tape, MnfDenseLayer& layer, Var z);
Var kl_conditional_gaussian(Tape& tape, MnfConvLayer& layer, Var z);
// z = 1: the fully factorized Gaussian against N(0, I).
Var kl_conditional_gaussian(Tape& tape, GaussianDenseLayer& layer);
double kl_conditional_gaussian(std::span<const double> mean, std::span<const double> log_var,
                               std::span<const double> z_per_entry);

// Parameters of the factorized Gaussian r(z_Tb | W); both [D_z].
struct AuxPosteriorParams {
  Var mu_tilde;
  Var sigma_tilde;  // in (0, 1)
};

// u = c^T W sampled directly from its induced Gaussian; t = mean_j tanh(u_j);
// mu_tilde = b1 t, sigma_tilde = sigmoid(b2 t).
AuxPosteriorParams aux_params_dense(Tape& tape, MnfDenseLayer& layer, Var z, Rng& rng);
// v = mat(W) c over the (KH KW C) rows of the flattened kernel; mean over rows.
AuxPosteriorParams aux_params_conv(Tape& tape, MnfConvLayer& layer, Var z, Rng& rng);

// log r(z_Tf | W): push z_Tf through the r-flow and evaluate the factorized
// Gaussian at the result, plus the accumulated log-determinant.
Var log_r(Tape& tape, FlowStack& r_flow, Var z, const AuxPosteriorParams& aux, Rng& rng);
Var log_r(Tape& tape, FlowStack& r_flow, Var z, const AuxPosteriorParams& aux, const MaskTrace& masks);
Var log_r(Tape& tape, MnfDenseLayer& layer, Var z, Rng& rng);
Var log_r(Tape& tape, MnfConvLayer& layer, Var z, Rng& rng);

// log q(z_Tf) = log q(z0) - sum of q-flow log-determinants.
Var log_q_z(Tape& tape, Var z0, Var q_flow_logdet, Parameter& z0_mean, Parameter& z0_log_var);

// Negative-KL surrogate for the log-uniform prior, per weight with
// log alpha = log sigma^2 - log mu^2:
//   -KL ~= k1 sigmoid(k2 + k3 log alpha) - softplus(-log alpha) / 2 - k1.
// mu = 0 is treated as log alpha = +inf (value and gradient 0).
struct FfluConstants {
  double k1 = 0.63576, k2 = 1.87320, k3 = 1.48695;
};
// Returns the (positive) KL summed over weights.
Var kl_fflu(Tape& tape, GaussianDenseLayer& layer, const FfluConstants& k = {});
Var kl_fflu(Var mean, Var log_var, const FfluConstants& k = {});
double neg_kl_fflu(double log_alpha, const FfluConstants& k = {});

// (pi / 2) ||M||^2.
Var dropout_limit_regularizer(Var weight, Var keep_prob);
double dropout_limit_regularizer(std::span<const double> weight, double keep_prob);

// sum_n advantage_n log p(m_n | pi) for per-example Bernoulli masks m: [B, D].
// Its gradient in pi is the score-function estimator.
Var reinforce_surrogate(Var keep_prob, const Tensor& mask, std::span<const double> advantage);

struct LayerElboTerms {
  std::string layer;
  double kl_conditional = 0.0;
  double log_r = 0.0;
  double log_q_z = 0.0;

  // kl_conditional - log_r + log_q_z
  double penalty() const { return kl_conditional - log_r + log_q_z; }
};

struct ElboBreakdown {
  double expected_log_likelihood = 0.0;  // rescaled by N / B
  std::vector<LayerElboTerms> layers;    // weight-bearing layers, in order
  double total_elbo = 0.0;
  Var total;          // differentiable total_elbo
  Var per_example_ll; // [B], unscaled
  std::vector<LayerTrace> traces;
};

struct Batch {
  Tensor inputs;                   // [B, input_shape...]
  std::vector<std::size_t> labels; // categorical likelihood
  Tensor targets;                  // [B, 1] for the gaussian likelihood
  std::size_t size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
};

// One augmented-space sample (z0, masks, z_Tf per layer) shared by the
// likelihood and every layer term. Random draws, in order: the forward pass,
// then per MNF layer the auxiliary noise and the r-flow masks.
ElboBreakdown elbo_minibatch(Tape& tape, Model& model, const Batch& batch, Rng& rng, std::size_t n_total);

}  // namespace mnf
