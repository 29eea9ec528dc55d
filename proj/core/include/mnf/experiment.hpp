#pragma once

#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnf/config.hpp"
#include "mnf/data.hpp"

namespace mnf {

// train, eval-entropy, eval-adversarial, eval-rotation, eval-regression,
// eval-memorization.
const std::vector<std::string>& command_names();

// Artifacts under config.output_dir:
//   train              model.mnf, train_log.jsonl, train_summary.json
//   eval-entropy       entropy_cdf.csv (entropy,cdf), entropy_summary.json
//   eval-adversarial   adversarial.csv (epsilon,accuracy,mean_entropy), adversarial_summary.json
//   eval-rotation      rotation.csv (angle,p0..pK-1,entropy), rotation_summary.json
//   eval-regression    bands.csv (x,mean,std), regression_summary.json
//   eval-memorization  memorization_summary.json
// Summaries are {"model", "seed", "metrics"}. Returns the summary.
nlohmann::json run(const std::string& command, const ExperimentConfig& config);

enum class Split { train, test, ood };
DatasetHandle load_split(const ExperimentConfig& config, Split split);

// Machine-readable failure record: {"error": <kind>, "message": ..., "fields": [...]}.
nlohmann::json error_json(const std::exception& e);

// Shortest round-trip decimal form used for every CSV cell.
std::string format_double(double v);

}  // namespace mnf
