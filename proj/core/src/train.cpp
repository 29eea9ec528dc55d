#include "mnf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mnf/errors.hpp"

namespace mnf {

namespace {

constexpr double kMinKeep = 1e-3;
constexpr double kMaxKeep = 1.0 - 1e-3;

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

std::string to_json_line(const StepRecord& record) {
  nlohmann::json j;
  j["step"] = record.step;
  j["elbo"] = record.elbo;
  j["ll"] = record.ll;
  j["kl_per_layer"] = record.kl_per_layer;
  j["wall_ms"] = record.wall_ms ? nlohmann::json(*record.wall_ms) : nlohmann::json(nullptr);
  return j.dump();
}

TrainResult train(Model& model, const DatasetHandle& data, const TrainConfig& config, std::ostream* log,
                  const EvalCallback& on_eval) {
  const std::size_t n = data.size();
  if (n == 0) throw ContractViolation("train: empty dataset");
  if (config.batch_size == 0) throw ContractViolation("train: batch_size must be positive");
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = config.steps > 0 ? config.steps : config.epochs * per_epoch;
  const Shape example = model.spec.input_shape;

  auto params = model.parameters();
  AdamState adam = make_adam_state(params, config.adam);
  Rng data_rng(config.seed, 1);
  const Rng noise_root(config.seed, 2);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;  // forces a shuffle before the first batch
  std::optional<double> baseline;

  TrainResult result;
  result.steps = total_steps;
  for (std::size_t step = 0; step < total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cursor >= n) {
      shuffle(std::span<std::size_t>(order), data_rng);
      cursor = 0;
    }
    const std::size_t take = std::min(batch, n - cursor);
    Batch b = gather(data, std::span<const std::size_t>(order).subspan(cursor, take), example);
    cursor += take;

    Rng noise = noise_root.fork(step);
    Tape tape;
    StepRecord record;
    record.step = step;
    try {
      ElboBreakdown elbo = elbo_minibatch(tape, model, b, noise, n);
      Var objective = elbo.total;

      // Score-function term for learnable keep probabilities.
      const auto& ll = elbo.per_example_ll.value().storage();
      const double ll_mean = std::accumulate(ll.begin(), ll.end(), 0.0) / static_cast<double>(ll.size());
      bool has_learnable = false;
      for (const auto& trace : elbo.traces) {
        if (!trace.dropout) continue;
        const auto& layer = std::get<DropoutLayer>(model.layers[trace.layer].body);
        if (!layer.learnable) continue;
        has_learnable = true;
        if (!baseline) baseline = ll_mean;
        const double scale = static_cast<double>(n) / static_cast<double>(take);
        std::vector<double> advantage(ll.size());
        for (std::size_t i = 0; i < ll.size(); ++i) advantage[i] = scale * (ll[i] - *baseline);
        const Tensor mask = trace.dropout->mask.reshaped(Shape{take, trace.dropout->mask.size() / take});
        objective = objective + reinforce_surrogate(trace.dropout->keep_prob, mask, advantage);
      }
      if (has_learnable) *baseline = config.baseline_momentum * *baseline + (1.0 - config.baseline_momentum) * ll_mean;

      Var loss = -objective;
      Gradients grads = tape.backward(loss);
      adam_step(params, grads, adam);

      record.elbo = elbo.total_elbo;
      record.ll = elbo.expected_log_likelihood;
      for (const auto& terms : elbo.layers) record.kl_per_layer.push_back(terms.penalty());
    } catch (const NumericFault& e) {
      throw NumericFault("step " + std::to_string(step) + "/" + e.op(), e.what());
    }

    for (auto& ml : model.layers) {
      if (ml.kind != LayerKind::dropout) continue;
      auto& layer = std::get<DropoutLayer>(ml.body);
      if (!layer.learnable) continue;
      double& lg = layer.logit.value[0];
      const double lo = logit(kMinKeep), hi = logit(kMaxKeep);
      if (lg < lo || lg > hi) {
        lg = std::clamp(lg, lo, hi);
        std::string msg = "step " + std::to_string(step) + ": " + layer.name + " keep probability clamped to " +
                          (lg == lo ? "1e-3" : "1 - 1e-3");
        std::cerr << "warning: " << msg << '\n';
        result.warnings.push_back(std::move(msg));
      }
      layer.keep_prob = 1.0 / (1.0 + std::exp(-lg));
    }

    if (config.log_timing) {
      record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    if (log) *log << to_json_line(record) << '\n';
    result.log.push_back(std::move(record));
    if (on_eval && config.eval_every > 0 && (step + 1) % config.eval_every == 0) on_eval(step + 1, model);
  }
  return result;
}

}  // namespace mnf
