#include "mnf/elbo.hpp"

#include <cmath>

#include "mnf/errors.hpp"

namespace mnf {

namespace {

Var kl_gaussian_terms(Var scaled_mean, Var log_var) {
  Var terms = ops::exp(log_var) + ops::square(scaled_mean) - 1.0 - log_var;
  return 0.5 * ops::sum(terms);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

AuxPosteriorParams aux_from_projection(Tape& tape, Var proj_mean, Var proj_var, Parameter& b1, Parameter& b2,
                                       Rng& rng) {
  Var noise = tape.constant(sample_normal(rng, proj_mean.shape()));
  Var u = proj_mean + ops::sqrt(proj_var) * noise;
  Var t = ops::mean(ops::tanh(u));
  return AuxPosteriorParams{tape.param(b1) * t, ops::sigmoid(tape.param(b2) * t)};
}

}  // namespace

Var kl_conditional_gaussian(Tape& tape, MnfDenseLayer& layer, Var z) {
  if (z.size() != layer.in()) throw ContractViolation(layer.name + ": z has shape " + to_string(z.shape()));
  Var scaled = tape.param(layer.mean) * ops::reshape(z, Shape{layer.in(), 1});
  return kl_gaussian_terms(scaled, tape.param(layer.log_var));
}

Var kl_conditional_gaussian(Tape& tape, MnfConvLayer& layer, Var z) {
  if (z.size() != layer.filters()) throw ContractViolation(layer.name + ": z has shape " + to_string(z.shape()));
  Var scaled = tape.param(layer.mean) * ops::reshape(z, Shape{layer.filters()});
  return kl_gaussian_terms(scaled, tape.param(layer.log_var));
}

Var kl_conditional_gaussian(Tape& tape, GaussianDenseLayer& layer) {
  return kl_gaussian_terms(tape.param(layer.mean), tape.param(layer.log_var));
}

double kl_conditional_gaussian(std::span<const double> mean, std::span<const double> log_var,
                               std::span<const double> z_per_entry) {
  if (mean.size() != log_var.size() || mean.size() != z_per_entry.size()) {
    throw ContractViolation("kl_conditional_gaussian: length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double m = z_per_entry[i] * mean[i];
    total += std::exp(log_var[i]) + m * m - 1.0 - log_var[i];
  }
  return 0.5 * total;
}

AuxPosteriorParams aux_params_dense(Tape& tape, MnfDenseLayer& layer, Var z, Rng& rng) {
  const std::size_t in = layer.in();
  if (z.size() != in) throw ContractViolation(layer.name + ": z has shape " + to_string(z.shape()));
  Var c = tape.param(layer.c);
  Var cz = ops::reshape(c * ops::reshape(z, Shape{in}), Shape{1, in});
  Var c2 = ops::reshape(ops::square(c), Shape{1, in});
  Var proj_mean = ops::matmul(cz, tape.param(layer.mean));
  Var proj_var = ops::matmul(c2, ops::exp(tape.param(layer.log_var)));
  return aux_from_projection(tape, proj_mean, proj_var, layer.b1, layer.b2, rng);
}

AuxPosteriorParams aux_params_conv(Tape& tape, MnfConvLayer& layer, Var z, Rng& rng) {
  const std::size_t f = layer.filters();
  if (z.size() != f) throw ContractViolation(layer.name + ": z has shape " + to_string(z.shape()));
  const std::size_t rows = layer.mean.value.size() / f;
  Var c = tape.param(layer.c);
  Var cz = ops::reshape(c * ops::reshape(z, Shape{f}), Shape{f, 1});
  Var c2 = ops::reshape(ops::square(c), Shape{f, 1});
  Var mean_mat = ops::reshape(tape.param(layer.mean), Shape{rows, f});
  Var var_mat = ops::reshape(ops::exp(tape.param(layer.log_var)), Shape{rows, f});
  return aux_from_projection(tape, ops::matmul(mean_mat, cz), ops::matmul(var_mat, c2), layer.b1, layer.b2, rng);
}

Var log_r(Tape& tape, FlowStack& r_flow, Var z, const AuxPosteriorParams& aux, const MaskTrace& masks) {
  auto flow = stack_forward(tape, z, r_flow, masks);
  Var log_var = 2.0 * ops::log(aux.sigma_tilde);
  return log_density_factorized_gaussian(flow.z, aux.mu_tilde, log_var) + flow.logdet;
}

Var log_r(Tape& tape, FlowStack& r_flow, Var z, const AuxPosteriorParams& aux, Rng& rng) {
  MaskTrace masks;
  for (std::size_t t = 0; t < r_flow.length(); ++t) masks.push_back(sample_bernoulli(rng, 0.5, Shape{r_flow.dim}));
  return log_r(tape, r_flow, z, aux, masks);
}

Var log_r(Tape& tape, MnfDenseLayer& layer, Var z, Rng& rng) {
  auto aux = aux_params_dense(tape, layer, z, rng);
  return log_r(tape, layer.r_flow, z, aux, rng);
}

Var log_r(Tape& tape, MnfConvLayer& layer, Var z, Rng& rng) {
  auto aux = aux_params_conv(tape, layer, z, rng);
  return log_r(tape, layer.r_flow, z, aux, rng);
}

Var log_q_z(Tape& tape, Var z0, Var q_flow_logdet, Parameter& z0_mean, Parameter& z0_log_var) {
  return log_density_factorized_gaussian(z0, tape.param(z0_mean), tape.param(z0_log_var)) - q_flow_logdet;
}

double neg_kl_fflu(double log_alpha, const FfluConstants& k) {
  if (log_alpha == std::numeric_limits<double>::infinity()) return 0.0;
  return k.k1 * logistic(k.k2 + k.k3 * log_alpha) - 0.5 * softplus(-log_alpha) - k.k1;
}

Var kl_fflu(Var mean, Var log_var, const FfluConstants& k) {
  if (mean.shape() != log_var.shape()) throw ContractViolation("kl_fflu: mean/log_var shape mismatch");
  const auto& m = mean.value().storage();
  const auto& lv = log_var.value().storage();
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0) continue;
    total -= neg_kl_fflu(lv[i] - std::log(m[i] * m[i]), k);
  }
  return mean.tape().record("kl_fflu", Tensor::scalar(total), {mean, log_var},
                            [mean, log_var, k](const Tensor&, const Tensor& g, GradSink& sink) {
                              const auto& m = mean.value().storage();
                              const auto& lv = log_var.value().storage();
                              const double go = g[0];
                              Tensor* gm = sink.wants(mean) ? &sink.at(mean) : nullptr;
                              Tensor* gl = sink.wants(log_var) ? &sink.at(log_var) : nullptr;
                              for (std::size_t i = 0; i < m.size(); ++i) {
                                if (m[i] == 0.0) continue;
                                const double la = lv[i] - std::log(m[i] * m[i]);
                                const double s = logistic(k.k2 + k.k3 * la);
                                // d(KL)/d(log alpha)
                                const double d = -(k.k1 * k.k3 * s * (1.0 - s) + 0.5 * logistic(-la));
                                if (gl) (*gl)[i] += go * d;
                                if (gm) (*gm)[i] += go * d * (-2.0 / m[i]);
                              }
                            });
}

Var kl_fflu(Tape& tape, GaussianDenseLayer& layer, const FfluConstants& k) {
  return kl_fflu(tape.param(layer.mean), tape.param(layer.log_var), k);
}

Var dropout_limit_regularizer(Var weight, Var keep_prob) {
  if (keep_prob.size() != 1) throw ContractViolation("dropout_limit_regularizer: keep probability must be scalar");
  const double p = keep_prob.item();
  if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("dropout_limit_regularizer: keep probability outside [0, 1]");
  return 0.5 * ops::reshape(keep_prob, Shape{}) * ops::sum(ops::square(weight));
}

double dropout_limit_regularizer(std::span<const double> weight, double keep_prob) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
    throw ContractViolation("dropout_limit_regularizer: keep probability outside [0, 1]");
  }
  double sq = 0.0;
  for (double w : weight) sq += w * w;
  return 0.5 * keep_prob * sq;
}

Var reinforce_surrogate(Var keep_prob, const Tensor& mask, std::span<const double> advantage) {
  if (mask.rank() != 2 || mask.dim(0) != advantage.size()) {
    throw ContractViolation("reinforce_surrogate: mask " + to_string(mask.shape()) + " vs " +
                            std::to_string(advantage.size()) + " advantages");
  }
  const std::size_t d = mask.dim(1);
  double weighted_on = 0.0, weighted_off = 0.0;
  for (std::size_t n = 0; n < advantage.size(); ++n) {
    double on = 0.0;
    for (std::size_t j = 0; j < d; ++j) on += mask[n * d + j];
    weighted_on += advantage[n] * on;
    weighted_off += advantage[n] * (static_cast<double>(d) - on);
  }
  Var p = ops::reshape(keep_prob, Shape{});
  return weighted_on * ops::log(p) + weighted_off * ops::log(1.0 - p);
}

ElboBreakdown elbo_minibatch(Tape& tape, Model& model, const Batch& batch, Rng& rng, std::size_t n_total) {
  const std::size_t b = batch.size();
  if (b == 0) throw ContractViolation("elbo_minibatch: empty batch");
  Var x = tape.constant(batch.inputs);
  auto fwd = forward(tape, model, x, rng, true);

  ElboBreakdown out;
  const Tensor* targets = model.spec.likelihood == Likelihood::gaussian ? &batch.targets : nullptr;
  out.per_example_ll = log_likelihood(fwd.output, model.spec, batch.labels, targets);
  const double scale = static_cast<double>(n_total) / static_cast<double>(b);
  Var total = scale * ops::sum(out.per_example_ll);
  out.expected_log_likelihood = total.item();

  std::optional<DropoutForward> pending_dropout;
  const DropoutLayer* pending_layer = nullptr;
  std::size_t trace_index = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    ModelLayer& ml = model.layers[i];
    const LayerTrace* trace = nullptr;
    if (trace_index < fwd.traces.size() && fwd.traces[trace_index].layer == i) trace = &fwd.traces[trace_index++];

    LayerElboTerms terms{ml.name};
    std::optional<Var> penalty;
    try {
      switch (ml.kind) {
        case LayerKind::mnf_dense: {
          auto& layer = std::get<MnfDenseLayer>(ml.body);
          const auto& noise = *trace->noise;
          Var kl = kl_conditional_gaussian(tape, layer, noise.z);
          Var lr = log_r(tape, layer, noise.z, rng);
          Var lq = log_q_z(tape, noise.z0, noise.logdet, layer.q_z0_mean, layer.q_z0_log_var);
          terms.kl_conditional = kl.item();
          terms.log_r = lr.item();
          terms.log_q_z = lq.item();
          penalty = kl - lr + lq;
          break;
        }
        case LayerKind::mnf_conv: {
          auto& layer = std::get<MnfConvLayer>(ml.body);
          const auto& noise = *trace->noise;
          Var kl = kl_conditional_gaussian(tape, layer, noise.z);
          Var lr = log_r(tape, layer, noise.z, rng);
          Var lq = log_q_z(tape, noise.z0, noise.logdet, layer.q_z0_mean, layer.q_z0_log_var);
          terms.kl_conditional = kl.item();
          terms.log_r = lr.item();
          terms.log_q_z = lq.item();
          penalty = kl - lr + lq;
          break;
        }
        case LayerKind::ffg:
          penalty = kl_conditional_gaussian(tape, std::get<GaussianDenseLayer>(ml.body));
          break;
        case LayerKind::fflu:
          penalty = kl_fflu(tape, std::get<GaussianDenseLayer>(ml.body));
          break;
        case LayerKind::l2_dense:
        case LayerKind::l2_conv: {
          Var w = ml.kind == LayerKind::l2_dense ? tape.param(std::get<DenseLayer>(ml.body).weight)
                                                 : tape.param(std::get<ConvLayer>(ml.body).weight);
          if (pending_dropout) {
            // Expected squared norm of the effective weights under the masks.
            Var keep = pending_dropout->keep_prob;
            penalty = pending_layer->learnable ? dropout_limit_regularizer(w, keep)
                                     : dropout_limit_regularizer(w / keep.item(), keep);
          } else {
            penalty = 0.5 * ops::sum(ops::square(w));
          }
          break;
        }
        case LayerKind::dropout:
          if (trace && trace->dropout) {
            pending_dropout = trace->dropout;
            pending_layer = &std::get<DropoutLayer>(ml.body);
          }
          break;
        default:
          break;
      }
    } catch (const NumericFault& e) {
      throw NumericFault(ml.name + "/" + e.op(), e.what());
    }
    if (ml.kind != LayerKind::dropout && ml.kind != LayerKind::relu && ml.kind != LayerKind::flatten &&
        ml.kind != LayerKind::maxpool) {
      if (ml.kind != LayerKind::mnf_dense && ml.kind != LayerKind::mnf_conv) terms.kl_conditional = penalty->item();
      total = total - *penalty;
      out.layers.push_back(terms);
      pending_dropout.reset();
    }
  }
  out.total = total;
  out.total_elbo = total.item();
  out.traces = std::move(fwd.traces);
  return out;
}

}  // namespace mnf
