#include "mnf/experiment.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "mnf/checkpoint.hpp"
#include "mnf/errors.hpp"
#include "mnf/evaluation.hpp"
#include "mnf/train.hpp"

namespace mnf {

using nlohmann::json;

namespace {

std::filesystem::path prepare_output(const ExperimentConfig& c) {
  std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

json summary(const ExperimentConfig& c, json metrics) {
  return json{{"model", c.name}, {"seed", c.seed}, {"metrics", std::move(metrics)}};
}

void write_summary(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string csv_row(std::initializer_list<double> values) {
  std::string out;
  for (double v : values) {
    if (!out.empty()) out += ',';
    out += format_double(v);
  }
  return out + "\n";
}

void require(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError({field + ": " + msg});
}

double regression_rmse(Model& model, const DatasetHandle& data, const Rng& rng, std::size_t samples) {
  const Tensor y = sample_outputs(model, data.inputs, rng, samples);
  const std::size_t n = data.size();
  double se = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t s = 0; s < samples; ++s) mean += y[s * n + i];
    mean /= static_cast<double>(samples);
    const double d = mean - data.targets[i];
    se += d * d;
  }
  return std::sqrt(se / static_cast<double>(n));
}

json run_train(const ExperimentConfig& c) {
  const auto dir = prepare_output(c);
  DatasetHandle data = load_split(c, Split::train);
  Rng init_rng(c.seed, 0);
  Model model = init_model(c.model, init_rng);
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw FormatError("cannot write " + (dir / "train_log.jsonl").string());
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  auto result = train(model, data, tc, &log);
  save_checkpoint(c.checkpoint_path(), model);

  json metrics{{"steps", result.steps}};
  if (!result.log.empty()) {
    metrics["final_elbo"] = result.log.back().elbo;
    metrics["final_ll"] = result.log.back().ll;
  }
  metrics["warnings"] = result.warnings;
  const Rng eval_rng(c.seed, 4);
  if (c.model.likelihood == Likelihood::gaussian) {
    metrics["train_rmse"] = regression_rmse(model, data, eval_rng, c.eval.samples);
  } else if (!c.data.test_images.empty()) {
    DatasetHandle test = load_split(c, Split::test);
    auto s = predict(model, test.inputs, eval_rng, PredictOptions{c.eval.samples});
    metrics["test_accuracy"] = accuracy(s, test.labels);
    metrics["test_count"] = test.size();
  }
  json out = summary(c, metrics);
  write_summary(dir / "train_summary.json", out);
  return out;
}

json run_entropy(const ExperimentConfig& c) {
  require(!c.data.ood_images.empty(), "config.data.ood_images", "eval-entropy needs ood_images and ood_labels");
  const auto dir = prepare_output(c);
  Model model = load_checkpoint(c.checkpoint_path());
  DatasetHandle ood = load_split(c, Split::ood);
  auto s = predict(model, ood.inputs, Rng(c.seed, 5), PredictOptions{c.eval.samples});
  const double max = std::log(static_cast<double>(model.n_outputs()));
  auto cdf = entropy_cdf(s.entropy, c.eval.cdf_points, max);
  std::string csv = "entropy,cdf\n";
  for (std::size_t i = 0; i < cdf.grid.size(); ++i) csv += csv_row({cdf.grid[i], cdf.cdf[i]});
  write_text(dir / "entropy_cdf.csv", csv);
  double total = 0.0;
  for (double h : s.entropy) total += h;
  json out = summary(c, {{"median_entropy", median(s.entropy)},
                         {"mean_entropy", total / static_cast<double>(s.entropy.size())},
                         {"n_inputs", ood.size()},
                         {"samples", c.eval.samples}});
  write_summary(dir / "entropy_summary.json", out);
  return out;
}

json run_adversarial(const ExperimentConfig& c) {
  require(!c.data.test_images.empty(), "config.data.test_images", "eval-adversarial needs test_images and test_labels");
  const auto dir = prepare_output(c);
  Model model = load_checkpoint(c.checkpoint_path());
  DatasetHandle test = load_split(c, Split::test);
  auto rows = adversarial_sweep(model, test.inputs, test.labels, c.eval.epsilons, Rng(c.seed, 6),
                                PredictOptions{c.eval.samples}, FgsmOptions{c.eval.fgsm_samples});
  std::string csv = "epsilon,accuracy,mean_entropy\n";
  json table = json::array();
  for (const auto& r : rows) {
    csv += csv_row({r.epsilon, r.accuracy, r.mean_entropy});
    table.push_back({{"epsilon", r.epsilon}, {"accuracy", r.accuracy}, {"mean_entropy", r.mean_entropy}});
  }
  write_text(dir / "adversarial.csv", csv);
  json out = summary(c, {{"sweep", table}, {"n_inputs", test.size()}});
  write_summary(dir / "adversarial_summary.json", out);
  return out;
}

json run_rotation(const ExperimentConfig& c) {
  require(!c.data.test_images.empty(), "config.data.test_images", "eval-rotation needs test_images and test_labels");
  const auto dir = prepare_output(c);
  Model model = load_checkpoint(c.checkpoint_path());
  DatasetHandle test = load_split(c, Split::test);
  std::size_t index = test.size();
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] == c.eval.rotation_digit) {
      index = i;
      break;
    }
  }
  require(index < test.size(), "config.eval.rotation_digit", "no test image carries this label");
  const Tensor image = subset(test, index, 1).inputs.reshaped(Shape{test.inputs.dim(1), test.inputs.dim(2)});
  std::vector<double> angles = c.eval.angles;
  if (angles.empty()) {
    for (int a = 0; a <= 360; a += 10) angles.push_back(a);
  }
  auto rows = rotated_digit_sweep(model, image, angles, Rng(c.seed, 7), c.eval.samples);
  const std::size_t k = model.n_outputs();
  std::string csv = "angle";
  for (std::size_t j = 0; j < k; ++j) csv += ",p" + std::to_string(j);
  csv += ",entropy\n";
  for (const auto& r : rows) {
    csv += format_double(r.angle);
    for (double p : r.probs) csv += "," + format_double(p);
    csv += "," + format_double(r.entropy) + "\n";
  }
  write_text(dir / "rotation.csv", csv);
  json out = summary(c, {{"test_index", index}, {"digit", c.eval.rotation_digit}, {"angles", angles.size()}});
  write_summary(dir / "rotation_summary.json", out);
  return out;
}

json run_regression(const ExperimentConfig& c) {
  const auto dir = prepare_output(c);
  Model model = load_checkpoint(c.checkpoint_path());
  require(model.spec.likelihood == Likelihood::gaussian, "config.model.likelihood",
          "eval-regression needs a gaussian-likelihood model");
  const auto grid = linspace(c.eval.grid_min, c.eval.grid_max, c.eval.grid_points);
  auto rows = regression_bands(model, grid, Rng(c.seed, 8), c.eval.samples);
  std::string csv = "x,mean,std\n";
  for (const auto& r : rows) csv += csv_row({r.x, r.mean, r.std});
  write_text(dir / "bands.csv", csv);
  DatasetHandle data = load_split(c, Split::train);
  json out = summary(c, {{"train_rmse", regression_rmse(model, data, Rng(c.seed, 4), c.eval.samples)},
                         {"std_at_grid_min", rows.front().std},
                         {"std_at_grid_max", rows.back().std},
                         {"grid_points", rows.size()}});
  write_summary(dir / "regression_summary.json", out);
  return out;
}

json run_memorization(const ExperimentConfig& c) {
  require(!c.data.test_images.empty(), "config.data.test_images",
          "eval-memorization needs test_images and test_labels");
  const auto dir = prepare_output(c);
  DatasetHandle train_data = load_split(c, Split::train);
  DatasetHandle test = load_split(c, Split::test);
  auto r = memorization_protocol(c.model, train_data, test, c.train, c.seed, c.eval.samples);
  json out = summary(c, {{"train_accuracy", r.train_accuracy},
                         {"test_accuracy", r.test_accuracy},
                         {"train_count", train_data.size()},
                         {"test_count", test.size()}});
  write_summary(dir / "memorization_summary.json", out);
  return out;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train",         "eval-entropy",    "eval-adversarial",
                                              "eval-rotation", "eval-regression", "eval-memorization"};
  return names;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

DatasetHandle load_split(const ExperimentConfig& c, Split split) {
  const auto& d = c.data;
  if (d.kind == "synthetic-toy") {
    require(split == Split::train, "config.data.kind", "synthetic-toy data has only a training split");
    return make_toy_regression(c.seed, d.toy_points);
  }
  if (d.kind == "csv-regression") {
    require(split == Split::train, "config.data.kind", "csv-regression data has only a training split");
    return load_csv_regression(d.csv);
  }
  const std::string* images = &d.train_images;
  const std::string* labels = &d.train_labels;
  std::size_t limit = d.train_limit;
  const char* field = "config.data.train_images";
  if (split == Split::test) {
    images = &d.test_images, labels = &d.test_labels, limit = d.test_limit, field = "config.data.test_images";
  } else if (split == Split::ood) {
    images = &d.ood_images, labels = &d.ood_labels, limit = d.ood_limit, field = "config.data.ood_images";
  }
  require(!images->empty() && !labels->empty(), field, "image and label paths are required");
  DatasetHandle data = load_idx(*images, *labels);
  if (limit > 0 && limit < data.size()) data = subset(data, 0, limit);
  return data;
}

json run(const std::string& command, const ExperimentConfig& config) {
  check_paths(config);
  if (command == "train") return run_train(config);
  if (command == "eval-entropy") return run_entropy(config);
  if (command == "eval-adversarial") return run_adversarial(config);
  if (command == "eval-rotation") return run_rotation(config);
  if (command == "eval-regression") return run_regression(config);
  if (command == "eval-memorization") return run_memorization(config);
  throw ContractViolation("unknown command '" + command + "'");
}

json error_json(const std::exception& e) {
  json out{{"message", e.what()}};
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
    out["error"] = "config";
    out["fields"] = ce->fields();
  } else if (dynamic_cast<const FormatError*>(&e)) {
    out["error"] = "format";
  } else if (const auto* nf = dynamic_cast<const NumericFault*>(&e)) {
    out["error"] = "numeric";
    out["op"] = nf->op();
  } else if (dynamic_cast<const ContractViolation*>(&e)) {
    out["error"] = "contract";
  } else {
    out["error"] = "internal";
  }
  return out;
}

}  // namespace mnf
