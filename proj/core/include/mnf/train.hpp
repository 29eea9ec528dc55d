#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mnf/data.hpp"
#include "mnf/model.hpp"
#include "mnf/optim.hpp"

namespace mnf {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;  // clipped to the dataset size
  std::size_t steps = 0;         // when nonzero, overrides epochs
  std::uint64_t seed = 0;
  AdamConfig adam;
  double baseline_momentum = 0.99;  // REINFORCE running baseline
  bool log_timing = false;          // wall_ms is null otherwise
  std::size_t eval_every = 0;       // 0 disables the eval callback
};

struct StepRecord {
  std::size_t step = 0;
  double elbo = 0.0;
  double ll = 0.0;
  std::vector<double> kl_per_layer;  // kl_conditional - log_r + log_q_z per weight layer
  std::optional<double> wall_ms;
};

// One JSON object, no trailing newline.
std::string to_json_line(const StepRecord& record);

struct TrainResult {
  std::vector<StepRecord> log;
  std::vector<std::string> warnings;
  std::size_t steps = 0;
};

using EvalCallback = std::function<void(std::size_t step, Model& model)>;

// Maximizes the minibatch bound with Adam. Batches come from a per-epoch
// permutation drawn from stream 1 of the seed; step s draws its noise from
// Rng(seed, 2).fork(s). Learnable dropout rates get the REINFORCE estimator
// with a running-mean baseline, and their keep probability is clamped to
// [1e-3, 1 - 1e-3] with a warning. Numeric faults are rethrown with the step.
TrainResult train(Model& model, const DatasetHandle& data, const TrainConfig& config, std::ostream* log = nullptr,
                  const EvalCallback& on_eval = {});

}  // namespace mnf
