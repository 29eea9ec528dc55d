#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mnf/data.hpp"
#include "mnf/model.hpp"
#include "mnf/train.hpp"

namespace mnf {

struct PredictiveSummary {
  Tensor probs;                 // [n, K], rows on the simplex
  std::vector<double> entropy;  // nats, in [0, ln K]
  std::size_t n_samples = 0;
};

struct PredictOptions {
  std::size_t samples = 100;
  std::uint64_t sample_offset = 0;  // sample s draws from rng.fork(sample_offset + s)
  std::size_t chunk = 1000;         // inputs per forward pass (MNF noise is shared within a chunk)
};

// Worker count for evaluation: MNF_THREADS if set and positive, else the
// hardware concurrency. Results do not depend on it.
std::size_t evaluation_threads();

// Mean of the softmax outputs over S stochastic passes, summed in sample order.
// `inputs` is [n, ...] with as many values per row as the model input.
PredictiveSummary predict(Model& model, const Tensor& inputs, const Rng& rng, const PredictOptions& options = {});

// Raw network outputs [S, n] for a single-output model.
Tensor sample_outputs(Model& model, const Tensor& inputs, const Rng& rng, std::size_t samples);

double entropy_nats(std::span<const double> probs);
double accuracy(const PredictiveSummary& summary, std::span<const std::size_t> labels);

struct EntropyCdf {
  std::vector<double> grid;  // evenly spaced on [0, max]
  std::vector<double> cdf;   // fraction of entropies <= grid point
};

EntropyCdf entropy_cdf(std::span<const double> entropies, std::size_t points = 256, double max = 2.302585092994046);
double median(std::vector<double> values);

struct FgsmOptions {
  std::size_t grad_samples = 1;  // posterior samples averaged for the input gradient
  std::size_t chunk = 1000;
};

// x_adv = clip(x + eps sign(d NLL / dx), 0, 1), sign(0) = 0.
Tensor fgsm(Model& model, const Tensor& inputs, std::span<const std::size_t> labels, double epsilon,
            const Rng& rng, const FgsmOptions& options = {});

struct AdversarialRow {
  double epsilon = 0.0;
  double accuracy = 0.0;
  double mean_entropy = 0.0;
};

// Attacks draw from rng.fork(1), predictions from rng.fork(2) for every
// epsilon, so the eps = 0 row equals a clean predict on rng.fork(2).
std::vector<AdversarialRow> adversarial_sweep(Model& model, const Tensor& inputs, std::span<const std::size_t> labels,
                                              std::span<const double> epsilons, const Rng& rng,
                                              const PredictOptions& predict_options = {},
                                              const FgsmOptions& fgsm_options = {});

enum class Interpolation { bilinear, nearest };

// Rotation by `degrees` about ((rows - 1) / 2, (cols - 1) / 2), zero outside.
Tensor rotate_image(const Tensor& image, double degrees, Interpolation interp = Interpolation::bilinear);

struct RotationRow {
  double angle = 0.0;
  std::vector<double> probs;
  double entropy = 0.0;
};

// image: [rows, cols]. Each angle is predicted with the same stream.
std::vector<RotationRow> rotated_digit_sweep(Model& model, const Tensor& image, std::span<const double> angles,
                                             const Rng& rng, std::size_t samples = 100);

struct BandRow {
  double x = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

// std = sqrt(population variance of the S outputs + noise variance).
std::vector<BandRow> regression_bands(Model& model, std::span<const double> grid, const Rng& rng,
                                      std::size_t samples = 100);
std::vector<double> linspace(double lo, double hi, std::size_t points);

// Fraction of weights with log sigma^2 - log mu^2 >= threshold.
double sparsity(const GaussianDenseLayer& layer, double threshold = 5.0);

struct MemorizationResult {
  double train_accuracy = 0.0;  // against the permuted labels
  double test_accuracy = 0.0;   // against the true labels
};

// Labels permuted with Rng(seed, 3); model initialized from Rng(seed, 0).
MemorizationResult memorization_protocol(const ModelSpec& spec, const DatasetHandle& train_data,
                                         const DatasetHandle& test_data, const TrainConfig& config,
                                         std::uint64_t seed, std::size_t samples = 100);

}  // namespace mnf
