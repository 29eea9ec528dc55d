#include "mnf/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

#include "mnf/errors.hpp"

namespace mnf {

namespace {

template <typename Fn>
void parallel_for(std::size_t count, Fn fn) {
  const std::size_t workers = std::min(evaluation_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      (void)w;
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::size_t row_size(const Model& model, const Tensor& inputs) {
  if (inputs.rank() == 0) throw ContractViolation("inputs must have a leading example axis");
  const std::size_t row = inputs.size() / inputs.dim(0);
  if (row != num_elements(model.spec.input_shape)) {
    throw ContractViolation("inputs " + to_string(inputs.shape()) + " do not match model input " +
                            to_string(model.spec.input_shape));
  }
  return row;
}

Tensor rows_of(const Tensor& inputs, std::size_t row, std::size_t start, std::size_t count, const Shape& example) {
  Shape shape{count};
  shape.insert(shape.end(), example.begin(), example.end());
  auto first = inputs.storage().begin() + static_cast<std::ptrdiff_t>(start * row);
  return Tensor(shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * row)));
}

}  // namespace

std::size_t evaluation_threads() {
  if (const char* env = std::getenv("MNF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

double entropy_nats(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
}

PredictiveSummary predict(Model& model, const Tensor& inputs, const Rng& rng, const PredictOptions& options) {
  if (options.samples == 0) throw ContractViolation("predict: samples must be >= 1");
  if (options.chunk == 0) throw ContractViolation("predict: chunk must be >= 1");
  if (model.spec.likelihood != Likelihood::categorical) throw ContractViolation("predict: categorical model required");
  const std::size_t row = row_size(model, inputs);
  const std::size_t n = inputs.dim(0);
  const std::size_t k = model.n_outputs();
  const std::size_t s_count = options.samples;

  PredictiveSummary out{Tensor(Shape{n, k}), std::vector<double>(n), s_count};
  std::vector<std::vector<double>> per_sample(s_count);
  for (std::size_t start = 0, chunk_id = 0; start < n; start += options.chunk, ++chunk_id) {
    const std::size_t count = std::min(options.chunk, n - start);
    const Tensor x = rows_of(inputs, row, start, count, model.spec.input_shape);
    parallel_for(s_count, [&](std::size_t s) {
      Rng r = rng.fork(options.sample_offset + s).fork(chunk_id);
      Tape tape;
      auto fwd = forward(tape, model, tape.constant(x), r, true);
      Var logp = ops::log_softmax(fwd.output);
      const auto& lp = logp.value().storage();
      auto& buf = per_sample[s];
      buf.resize(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) buf[i] = std::exp(lp[i]);
    });
    double* dst = out.probs.data().data() + start * k;
    for (std::size_t s = 0; s < s_count; ++s) {
      for (std::size_t i = 0; i < count * k; ++i) dst[i] += per_sample[s][i];
    }
    for (std::size_t i = 0; i < count * k; ++i) dst[i] /= static_cast<double>(s_count);
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.entropy[i] = entropy_nats(std::span<const double>(out.probs.data().data() + i * k, k));
  }
  return out;
}

Tensor sample_outputs(Model& model, const Tensor& inputs, const Rng& rng, std::size_t samples) {
  if (samples == 0) throw ContractViolation("sample_outputs: samples must be >= 1");
  const std::size_t row = row_size(model, inputs);
  const std::size_t n = inputs.dim(0);
  if (model.n_outputs() != 1) throw ContractViolation("sample_outputs: single-output model required");
  const Tensor x = rows_of(inputs, row, 0, n, model.spec.input_shape);
  Tensor out(Shape{samples, n});
  parallel_for(samples, [&](std::size_t s) {
    Rng r = rng.fork(s);
    Tape tape;
    auto fwd = forward(tape, model, tape.constant(x), r, true);
    const auto& y = fwd.output.value().storage();
    std::copy(y.begin(), y.end(), out.data().begin() + static_cast<std::ptrdiff_t>(s * n));
  });
  return out;
}

double accuracy(const PredictiveSummary& summary, std::span<const std::size_t> labels) {
  const std::size_t n = summary.probs.dim(0), k = summary.probs.dim(1);
  if (labels.size() != n) throw ContractViolation("accuracy: label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = summary.probs.data().data() + i * k;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    if (arg == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

EntropyCdf entropy_cdf(std::span<const double> entropies, std::size_t points, double max) {
  if (entropies.empty()) throw ContractViolation("entropy_cdf: no entropies");
  if (points < 2) throw ContractViolation("entropy_cdf: need at least 2 grid points");
  if (!(max > 0.0)) throw ContractViolation("entropy_cdf: max must be positive");
  std::vector<double> sorted(entropies.begin(), entropies.end());
  for (double& e : sorted) {
    if (!std::isfinite(e) || e < 0.0) throw ContractViolation("entropy_cdf: entropies must be finite and >= 0");
    e = std::min(e, max);
  }
  std::sort(sorted.begin(), sorted.end());
  EntropyCdf out;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < points; ++i) {
    const double t = i + 1 == points ? max : max * static_cast<double>(i) / static_cast<double>(points - 1);
    out.grid.push_back(t);
    const auto below = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.cdf.push_back(static_cast<double>(below) / n);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Tensor fgsm(Model& model, const Tensor& inputs, std::span<const std::size_t> labels, double epsilon, const Rng& rng,
            const FgsmOptions& options) {
  if (!(epsilon >= 0.0)) throw ContractViolation("fgsm: epsilon must be >= 0");
  if (options.grad_samples == 0 || options.chunk == 0) throw ContractViolation("fgsm: bad options");
  const std::size_t row = row_size(model, inputs);
  const std::size_t n = inputs.dim(0);
  if (labels.size() != n) throw ContractViolation("fgsm: label count mismatch");
  Tensor out = inputs;
  if (epsilon == 0.0) return out;

  const std::size_t chunks = (n + options.chunk - 1) / options.chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t start = c * options.chunk;
    const std::size_t count = std::min(options.chunk, n - start);
    const Tensor x = rows_of(inputs, row, start, count, model.spec.input_shape);
    Tensor grad(x.shape());
    for (std::size_t s = 0; s < options.grad_samples; ++s) {
      Rng r = rng.fork(c).fork(s);
      Tape tape;
      Var xv = tape.leaf(x);
      auto fwd = forward(tape, model, xv, r, true);
      Var nll = -ops::sum(log_likelihood(fwd.output, model.spec, labels.subspan(start, count), nullptr));
      const Gradients grads = tape.backward(nll);
      const Tensor& g = grads.of(xv);
      for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
    double* dst = out.data().data() + start * row;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double sign = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
      dst[i] = std::clamp(dst[i] + epsilon * sign, 0.0, 1.0);
    }
  });
  return out;
}

std::vector<AdversarialRow> adversarial_sweep(Model& model, const Tensor& inputs, std::span<const std::size_t> labels,
                                              std::span<const double> epsilons, const Rng& rng,
                                              const PredictOptions& predict_options,
                                              const FgsmOptions& fgsm_options) {
  for (std::size_t i = 1; i < epsilons.size(); ++i) {
    if (epsilons[i] < epsilons[i - 1]) throw ContractViolation("adversarial_sweep: epsilons must be nondecreasing");
  }
  const Rng attack_rng = rng.fork(1);
  const Rng predict_rng = rng.fork(2);
  std::vector<AdversarialRow> rows;
  for (double eps : epsilons) {
    Tensor x_adv = fgsm(model, inputs, labels, eps, attack_rng, fgsm_options);
    auto summary = predict(model, x_adv, predict_rng, predict_options);
    double total = 0.0;
    for (double h : summary.entropy) total += h;
    rows.push_back({eps, accuracy(summary, labels), total / static_cast<double>(summary.entropy.size())});
  }
  return rows;
}

Tensor rotate_image(const Tensor& image, double degrees, Interpolation interp) {
  if (image.rank() != 2) throw ContractViolation("rotate_image: expected [rows, cols], got " + to_string(image.shape()));
  const std::size_t rows = image.dim(0), cols = image.dim(1);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(rows) - 1.0) / 2.0, cx = (static_cast<double>(cols) - 1.0) / 2.0;
  auto pixel = [&](long r, long q) -> double {
    if (r < 0 || q < 0 || r >= static_cast<long>(rows) || q >= static_cast<long>(cols)) return 0.0;
    return image.at(static_cast<std::size_t>(r), static_cast<std::size_t>(q));
  };
  Tensor out(image.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < cols; ++q) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(q) - cx;
      // Inverse map of an anticlockwise rotation (image y axis points down).
      const double sx = c * dx - s * dy + cx;
      const double sy = s * dx + c * dy + cy;
      if (interp == Interpolation::nearest) {
        out.at(r, q) = pixel(std::lround(sy), std::lround(sx));
        continue;
      }
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      double v = 0.0;
      if (ty < 1.0 && tx < 1.0) v += (1.0 - ty) * (1.0 - tx) * pixel(y0, x0);
      if (tx > 0.0) v += (1.0 - ty) * tx * pixel(y0, x0 + 1);
      if (ty > 0.0) v += ty * (1.0 - tx) * pixel(y0 + 1, x0);
      if (ty > 0.0 && tx > 0.0) v += ty * tx * pixel(y0 + 1, x0 + 1);
      out.at(r, q) = v;
    }
  }
  return out;
}

std::vector<RotationRow> rotated_digit_sweep(Model& model, const Tensor& image, std::span<const double> angles,
                                             const Rng& rng, std::size_t samples) {
  std::vector<RotationRow> rows;
  Shape one{1};
  one.insert(one.end(), image.shape().begin(), image.shape().end());
  for (double angle : angles) {
    Tensor rotated = rotate_image(image, angle).reshaped(one);
    auto summary = predict(model, rotated, rng, PredictOptions{samples, 0, 1});
    const auto& p = summary.probs.storage();
    rows.push_back({angle, std::vector<double>(p.begin(), p.end()), summary.entropy[0]});
  }
  return rows;
}

std::vector<double> linspace(double lo, double hi, std::size_t points) {
  if (points < 2) throw ContractViolation("linspace: need at least 2 points");
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  out.back() = hi;
  return out;
}

std::vector<BandRow> regression_bands(Model& model, std::span<const double> grid, const Rng& rng,
                                      std::size_t samples) {
  if (samples < 2) throw ContractViolation("regression_bands: need at least 2 samples");
  if (grid.empty()) throw ContractViolation("regression_bands: empty grid");
  Tensor x(Shape{grid.size(), 1}, std::vector<double>(grid.begin(), grid.end()));
  const Tensor y = sample_outputs(model, x, rng, samples);
  const std::size_t n = grid.size();
  const double noise = model.spec.noise_variance;
  std::vector<BandRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t s = 0; s < samples; ++s) mean += y[s * n + i];
    mean /= static_cast<double>(samples);
    double var = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      const double d = y[s * n + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(samples);
    rows.push_back({grid[i], mean, std::sqrt(var + noise)});
  }
  return rows;
}

double sparsity(const GaussianDenseLayer& layer, double threshold) {
  const auto& m = layer.mean.value.storage();
  const auto& lv = layer.log_var.value.storage();
  std::size_t pruned = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0 || lv[i] - std::log(m[i] * m[i]) >= threshold) ++pruned;
  }
  return static_cast<double>(pruned) / static_cast<double>(m.size());
}

MemorizationResult memorization_protocol(const ModelSpec& spec, const DatasetHandle& train_data,
                                         const DatasetHandle& test_data, const TrainConfig& config,
                                         std::uint64_t seed, std::size_t samples) {
  DatasetHandle shuffled = train_data;
  Rng label_rng(seed, 3);
  permute_labels(shuffled, label_rng);
  Rng init_rng(seed, 0);
  Model model = init_model(spec, init_rng);
  TrainConfig cfg = config;
  cfg.seed = seed;
  train(model, shuffled, cfg);
  const Rng eval_rng(seed, 4);
  PredictOptions opts{samples, 0, 1000};
  MemorizationResult out;
  out.train_accuracy = accuracy(predict(model, shuffled.inputs, eval_rng, opts), shuffled.labels);
  out.test_accuracy = accuracy(predict(model, test_data.inputs, eval_rng, opts), test_data.labels);
  return out;
}

}  // namespace mnf
