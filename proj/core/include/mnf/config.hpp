#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnf/model.hpp"
#include "mnf/train.hpp"

namespace mnf {

inline constexpr int kSchemaVersion = 1;

struct DataConfig {
  std::string kind = "idx-images";  // idx-images | csv-regression | synthetic-toy
  std::string train_images, train_labels;
  std::string test_images, test_labels;
  std::string ood_images, ood_labels;
  std::string csv;
  std::size_t train_limit = 0;  // 0 keeps every row
  std::size_t test_limit = 0;
  std::size_t ood_limit = 0;
  std::size_t toy_points = 20;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EvalConfig {
  std::size_t samples = 100;
  std::size_t fgsm_samples = 1;
  std::vector<double> epsilons{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  std::vector<double> angles;  // empty: 0, 10, ..., 360
  std::size_t rotation_digit = 3;
  std::size_t grid_points = 200;
  double grid_min = -6.0, grid_max = 6.0;
  std::size_t cdf_points = 256;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string name = "model";
  std::uint64_t seed = 0;
  ModelSpec model;
  DataConfig data;
  TrainConfig train;  // train.seed mirrors `seed`
  EvalConfig eval;
  std::string output_dir = "out";
  std::string checkpoint;  // empty: <output_dir>/model.mnf

  std::filesystem::path checkpoint_path() const;
};

nlohmann::json to_json(const ModelSpec& spec);
// Throws ConfigError listing every problem; `where` prefixes field paths.
ModelSpec model_spec_from_json(const nlohmann::json& j, const std::string& where = "model");

nlohmann::json to_json(const ExperimentConfig& config);
// Validates schema and value ranges (not file existence) and lists every
// violated field in one ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
// Reads a JSON file; relative data paths are resolved against its directory.
ExperimentConfig load_config(const std::filesystem::path& path);
// Every nonempty data path must exist.
void check_paths(const ExperimentConfig& config);

}  // namespace mnf
