#include "mnf/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "mnf/errors.hpp"

namespace mnf {

using nlohmann::json;

namespace {

// Collects every problem instead of stopping at the first.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

  void fail(const std::string& path, const std::string& msg) { errors_.push_back(path + ": " + msg); }

  bool object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    fail(path, "expected an object");
    return false;
  }

  void allow_only(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!allowed.count(it.key())) fail(path + "." + it.key(), "unknown field");
    }
  }

  template <typename T>
  void read(const json& j, const std::string& path, const char* key, T& out, bool required = false) {
    if (!j.contains(key)) {
      if (required) fail(path + "." + key, "required field missing");
      return;
    }
    convert(j.at(key), path + "." + key, out);
  }

 private:
  void convert(const json& v, const std::string& path, std::size_t& out) {
    if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      out = v.get<std::size_t>();
    } else {
      fail(path, "expected a non-negative integer");
    }
  }
  void convert(const json& v, const std::string& path, int& out) {
    if (v.is_number_integer()) {
      out = v.get<int>();
    } else {
      fail(path, "expected an integer");
    }
  }
  void convert(const json& v, const std::string& path, double& out) {
    if (v.is_number()) {
      out = v.get<double>();
    } else {
      fail(path, "expected a number");
    }
  }
  void convert(const json& v, const std::string& path, bool& out) {
    if (v.is_boolean()) {
      out = v.get<bool>();
    } else {
      fail(path, "expected a boolean");
    }
  }
  void convert(const json& v, const std::string& path, std::string& out) {
    if (v.is_string()) {
      out = v.get<std::string>();
    } else {
      fail(path, "expected a string");
    }
  }
  void convert(const json& v, const std::string& path, std::vector<double>& out) {
    if (!v.is_array()) {
      fail(path, "expected an array of numbers");
      return;
    }
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number()) {
        fail(path, "expected an array of numbers");
        return;
      }
      out.push_back(e.get<double>());
    }
  }
  void convert(const json& v, const std::string& path, Shape& out) {
    if (!v.is_array() || v.empty()) {
      fail(path, "expected a nonempty array of positive integers");
      return;
    }
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<std::int64_t>() <= 0) {
        fail(path, "expected a nonempty array of positive integers");
        return;
      }
      out.push_back(e.get<std::size_t>());
    }
  }

  std::vector<std::string>& errors_;
};

json layer_to_json(const LayerSpec& l) {
  json j{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::mnf_dense:
    case LayerKind::ffg:
    case LayerKind::fflu:
    case LayerKind::l2_dense:
      j["in"] = l.in;
      j["out"] = l.out;
      break;
    case LayerKind::mnf_conv:
    case LayerKind::l2_conv:
      j["kernel"] = l.kernel;
      j["channels"] = l.channels;
      j["filters"] = l.filters;
      j["padding"] = l.padding == ops::Padding::valid ? "valid" : "same";
      break;
    case LayerKind::dropout:
      j["keep_prob"] = l.keep_prob;
      j["learnable"] = l.learnable;
      break;
    default:
      break;
  }
  if (l.kind == LayerKind::mnf_dense || l.kind == LayerKind::mnf_conv) {
    j["flow_q"] = l.flow_q;
    j["flow_r"] = l.flow_r;
    j["hidden_q"] = l.hidden_q;
    j["hidden_r"] = l.hidden_r;
  }
  return j;
}

LayerSpec layer_from_json(const json& j, const std::string& path, Reader& r) {
  LayerSpec l;
  if (!r.object(j, path)) return l;
  std::string kind;
  r.read(j, path, "kind", kind, true);
  try {
    l.kind = parse_layer_kind(kind);
  } catch (const ConfigError&) {
    if (j.contains("kind")) r.fail(path + ".kind", "unknown layer kind '" + kind + "'");
    return l;
  }
  const bool mnf = l.kind == LayerKind::mnf_dense || l.kind == LayerKind::mnf_conv;
  switch (l.kind) {
    case LayerKind::mnf_dense:
    case LayerKind::ffg:
    case LayerKind::fflu:
    case LayerKind::l2_dense:
      if (mnf) {
        r.allow_only(j, path, {"kind", "in", "out", "flow_q", "flow_r", "hidden_q", "hidden_r"});
      } else {
        r.allow_only(j, path, {"kind", "in", "out"});
      }
      r.read(j, path, "in", l.in, true);
      r.read(j, path, "out", l.out, true);
      break;
    case LayerKind::mnf_conv:
    case LayerKind::l2_conv: {
      if (mnf) {
        r.allow_only(j, path,
                     {"kind", "kernel", "channels", "filters", "padding", "flow_q", "flow_r", "hidden_q", "hidden_r"});
      } else {
        r.allow_only(j, path, {"kind", "kernel", "channels", "filters", "padding"});
      }
      r.read(j, path, "kernel", l.kernel);
      r.read(j, path, "channels", l.channels);
      r.read(j, path, "filters", l.filters, true);
      std::string padding = "valid";
      r.read(j, path, "padding", padding);
      if (padding == "same") {
        l.padding = ops::Padding::same;
      } else if (padding != "valid") {
        r.fail(path + ".padding", "expected \"valid\" or \"same\"");
      }
      break;
    }
    case LayerKind::dropout:
      r.allow_only(j, path, {"kind", "keep_prob", "learnable"});
      r.read(j, path, "keep_prob", l.keep_prob);
      r.read(j, path, "learnable", l.learnable);
      break;
    default:
      r.allow_only(j, path, {"kind"});
      break;
  }
  if (mnf) {
    r.read(j, path, "flow_q", l.flow_q);
    r.read(j, path, "flow_r", l.flow_r);
    r.read(j, path, "hidden_q", l.hidden_q);
    r.read(j, path, "hidden_r", l.hidden_r);
  }
  return l;
}

ModelSpec read_model(const json& j, const std::string& where, Reader& r) {
  ModelSpec spec;
  if (!r.object(j, where)) return spec;
  r.allow_only(j, where, {"input_shape", "likelihood", "noise_variance", "sigma_cap", "layers"});
  r.read(j, where, "input_shape", spec.input_shape, true);
  std::string likelihood = "categorical";
  r.read(j, where, "likelihood", likelihood);
  if (likelihood == "gaussian") {
    spec.likelihood = Likelihood::gaussian;
  } else if (likelihood != "categorical") {
    r.fail(where + ".likelihood", "expected \"categorical\" or \"gaussian\"");
  }
  r.read(j, where, "noise_variance", spec.noise_variance);
  if (j.contains("sigma_cap") && !j.at("sigma_cap").is_null()) r.read(j, where, "sigma_cap", spec.sigma_cap);
  if (!j.contains("layers") || !j.at("layers").is_array()) {
    r.fail(where + ".layers", "expected an array of layers");
    return spec;
  }
  const auto& layers = j.at("layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    spec.layers.push_back(layer_from_json(layers[i], where + ".layers[" + std::to_string(i) + "]", r));
  }
  return spec;
}

std::vector<std::string> semantic_errors(const ModelSpec& spec, const std::string& where) {
  try {
    validate(spec);
  } catch (const ConfigError& e) {
    std::vector<std::string> out;
    for (const auto& f : e.fields()) out.push_back(f.rfind("model", 0) == 0 ? where + f.substr(5) : f);
    return out;
  }
  return {};
}

}  // namespace

std::filesystem::path ExperimentConfig::checkpoint_path() const {
  if (!checkpoint.empty()) return checkpoint;
  return std::filesystem::path(output_dir) / "model.mnf";
}

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) layers.push_back(layer_to_json(l));
  return json{{"input_shape", spec.input_shape},
              {"likelihood", to_string(spec.likelihood)},
              {"noise_variance", spec.noise_variance},
              {"sigma_cap", std::isfinite(spec.sigma_cap) ? json(spec.sigma_cap) : json(nullptr)},
              {"layers", layers}};
}

ModelSpec model_spec_from_json(const json& j, const std::string& where) {
  std::vector<std::string> errors;
  Reader r(errors);
  ModelSpec spec = read_model(j, where, r);
  if (errors.empty()) errors = semantic_errors(spec, where);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return spec;
}

json to_json(const ExperimentConfig& c) {
  const auto& d = c.data;
  const auto& t = c.train;
  const auto& e = c.eval;
  return json{
      {"schema_version", c.schema_version},
      {"name", c.name},
      {"seed", c.seed},
      {"model", to_json(c.model)},
      {"data",
       {{"kind", d.kind},
        {"train_images", d.train_images},
        {"train_labels", d.train_labels},
        {"test_images", d.test_images},
        {"test_labels", d.test_labels},
        {"ood_images", d.ood_images},
        {"ood_labels", d.ood_labels},
        {"csv", d.csv},
        {"train_limit", d.train_limit},
        {"test_limit", d.test_limit},
        {"ood_limit", d.ood_limit},
        {"toy_points", d.toy_points}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"steps", t.steps},
        {"learning_rate", t.adam.learning_rate},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"epsilon", t.adam.epsilon},
        {"baseline_momentum", t.baseline_momentum},
        {"log_timing", t.log_timing}}},
      {"eval",
       {{"samples", e.samples},
        {"fgsm_samples", e.fgsm_samples},
        {"epsilons", e.epsilons},
        {"angles", e.angles},
        {"rotation_digit", e.rotation_digit},
        {"grid_points", e.grid_points},
        {"grid_min", e.grid_min},
        {"grid_max", e.grid_max},
        {"cdf_points", e.cdf_points}}},
      {"output_dir", c.output_dir},
      {"checkpoint", c.checkpoint},
  };
}

ExperimentConfig parse_config(const json& j) {
  std::vector<std::string> errors;
  Reader r(errors);
  ExperimentConfig c;
  if (!r.object(j, "config")) throw ConfigError(std::move(errors));
  r.allow_only(j, "config",
               {"schema_version", "name", "seed", "model", "data", "train", "eval", "output_dir", "checkpoint"});

  r.read(j, "config", "schema_version", c.schema_version, true);
  if (j.contains("schema_version") && c.schema_version != kSchemaVersion) {
    r.fail("config.schema_version", "unsupported version " + std::to_string(c.schema_version) + " (expected " +
                                        std::to_string(kSchemaVersion) + ")");
  }
  r.read(j, "config", "name", c.name);
  r.read(j, "config", "seed", c.seed);
  r.read(j, "config", "output_dir", c.output_dir);
  r.read(j, "config", "checkpoint", c.checkpoint);

  if (j.contains("model")) {
    c.model = read_model(j.at("model"), "config.model", r);
  } else {
    r.fail("config.model", "required field missing");
  }

  if (j.contains("data") && r.object(j.at("data"), "config.data")) {
    const auto& d = j.at("data");
    const std::string p = "config.data";
    r.allow_only(d, p,
                 {"kind", "train_images", "train_labels", "test_images", "test_labels", "ood_images", "ood_labels",
                  "csv", "train_limit", "test_limit", "ood_limit", "toy_points"});
    auto& dc = c.data;
    r.read(d, p, "kind", dc.kind);
    if (dc.kind != "idx-images" && dc.kind != "csv-regression" && dc.kind != "synthetic-toy") {
      r.fail(p + ".kind", "expected idx-images, csv-regression or synthetic-toy");
    }
    r.read(d, p, "train_images", dc.train_images);
    r.read(d, p, "train_labels", dc.train_labels);
    r.read(d, p, "test_images", dc.test_images);
    r.read(d, p, "test_labels", dc.test_labels);
    r.read(d, p, "ood_images", dc.ood_images);
    r.read(d, p, "ood_labels", dc.ood_labels);
    r.read(d, p, "csv", dc.csv);
    r.read(d, p, "train_limit", dc.train_limit);
    r.read(d, p, "test_limit", dc.test_limit);
    r.read(d, p, "ood_limit", dc.ood_limit);
    r.read(d, p, "toy_points", dc.toy_points);
    if (dc.kind == "idx-images" && (dc.train_images.empty() || dc.train_labels.empty())) {
      r.fail(p + ".train_images", "idx-images data needs train_images and train_labels");
    }
    if (dc.kind == "csv-regression" && dc.csv.empty()) r.fail(p + ".csv", "csv-regression data needs a csv path");
    if (dc.kind == "synthetic-toy" && dc.toy_points == 0) r.fail(p + ".toy_points", "must be positive");
  } else if (!j.contains("data")) {
    r.fail("config.data", "required field missing");
  }

  if (j.contains("train") && r.object(j.at("train"), "config.train")) {
    const auto& t = j.at("train");
    const std::string p = "config.train";
    r.allow_only(t, p,
                 {"epochs", "batch_size", "steps", "learning_rate", "beta1", "beta2", "epsilon", "baseline_momentum",
                  "log_timing"});
    auto& tc = c.train;
    r.read(t, p, "epochs", tc.epochs);
    r.read(t, p, "batch_size", tc.batch_size);
    r.read(t, p, "steps", tc.steps);
    r.read(t, p, "learning_rate", tc.adam.learning_rate);
    r.read(t, p, "beta1", tc.adam.beta1);
    r.read(t, p, "beta2", tc.adam.beta2);
    r.read(t, p, "epsilon", tc.adam.epsilon);
    r.read(t, p, "baseline_momentum", tc.baseline_momentum);
    r.read(t, p, "log_timing", tc.log_timing);
    if (tc.batch_size == 0) r.fail(p + ".batch_size", "must be positive");
    if (!(tc.adam.learning_rate > 0.0)) r.fail(p + ".learning_rate", "must be positive");
    if (!(tc.adam.beta1 >= 0.0 && tc.adam.beta1 < 1.0)) r.fail(p + ".beta1", "must lie in [0, 1)");
    if (!(tc.adam.beta2 >= 0.0 && tc.adam.beta2 < 1.0)) r.fail(p + ".beta2", "must lie in [0, 1)");
    if (!(tc.adam.epsilon > 0.0)) r.fail(p + ".epsilon", "must be positive");
    if (!(tc.baseline_momentum >= 0.0 && tc.baseline_momentum < 1.0)) {
      r.fail(p + ".baseline_momentum", "must lie in [0, 1)");
    }
  }

  if (j.contains("eval") && r.object(j.at("eval"), "config.eval")) {
    const auto& e = j.at("eval");
    const std::string p = "config.eval";
    r.allow_only(e, p,
                 {"samples", "fgsm_samples", "epsilons", "angles", "rotation_digit", "grid_points", "grid_min",
                  "grid_max", "cdf_points"});
    auto& ec = c.eval;
    r.read(e, p, "samples", ec.samples);
    r.read(e, p, "fgsm_samples", ec.fgsm_samples);
    r.read(e, p, "epsilons", ec.epsilons);
    r.read(e, p, "angles", ec.angles);
    r.read(e, p, "rotation_digit", ec.rotation_digit);
    r.read(e, p, "grid_points", ec.grid_points);
    r.read(e, p, "grid_min", ec.grid_min);
    r.read(e, p, "grid_max", ec.grid_max);
    r.read(e, p, "cdf_points", ec.cdf_points);
    if (ec.samples == 0) r.fail(p + ".samples", "must be positive");
    if (ec.fgsm_samples == 0) r.fail(p + ".fgsm_samples", "must be positive");
    for (std::size_t i = 0; i < ec.epsilons.size(); ++i) {
      if (ec.epsilons[i] < 0.0 || (i > 0 && ec.epsilons[i] < ec.epsilons[i - 1])) {
        r.fail(p + ".epsilons", "must be non-negative and nondecreasing");
        break;
      }
    }
    if (ec.grid_points < 2) r.fail(p + ".grid_points", "must be at least 2");
    if (!(ec.grid_min < ec.grid_max)) r.fail(p + ".grid_min", "must be below grid_max");
    if (ec.cdf_points < 2) r.fail(p + ".cdf_points", "must be at least 2");
  }

  // Shape checks only make sense once the model section itself parsed cleanly.
  const bool model_parsed = std::none_of(errors.begin(), errors.end(),
                                         [](const std::string& e) { return e.rfind("config.model", 0) == 0; });
  if (model_parsed) {
    for (auto& e : semantic_errors(c.model, "config.model")) errors.push_back(std::move(e));
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  c.train.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open config file"});
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  ExperimentConfig c = parse_config(j);
  const auto base = path.parent_path();
  for (std::string* p : {&c.data.train_images, &c.data.train_labels, &c.data.test_images, &c.data.test_labels,
                         &c.data.ood_images, &c.data.ood_labels, &c.data.csv}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

void check_paths(const ExperimentConfig& c) {
  std::vector<std::string> errors;
  const std::pair<const char*, const std::string*> paths[] = {
      {"train_images", &c.data.train_images}, {"train_labels", &c.data.train_labels},
      {"test_images", &c.data.test_images},   {"test_labels", &c.data.test_labels},
      {"ood_images", &c.data.ood_images},     {"ood_labels", &c.data.ood_labels},
      {"csv", &c.data.csv},
  };
  for (const auto& [field, value] : paths) {
    if (!value->empty() && !std::filesystem::exists(*value)) {
      errors.push_back(std::string("config.data.") + field + ": no such file " + *value);
    }
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

}  // namespace mnf
