#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triqa/data.hpp"
#include "triqa/model.hpp"
#include "triqa/train.hpp"

namespace triqa {

/// Carries every validation problem found in a config, each prefixed with
/// the JSON pointer of the offending field.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct DataConfig {
  std::string manifest;
  SplitSpec split;
  std::array<int, 2> image_size{192, 192};
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;  // train.image_size mirrors data.image_size
  DataConfig data;
  std::string output_dir = "out";
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& pointer = "");

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys take defaults; unknown keys, wrong types and semantic
/// violations are all collected into one ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// SHA-256 of the canonical (sorted-key, compact) JSON form.
std::string config_hash(const ExperimentConfig& config);

}  // namespace triqa
