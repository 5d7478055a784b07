#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "triqa/config.hpp"

namespace triqa {

enum class AblationAxis { branches, backbones };

std::string_view to_string(AblationAxis axis);
/// Accepts "branches" or "backbones"; anything else throws std::invalid_argument.
AblationAxis parse_ablation_axis(std::string_view text);

/// Channel widths for the "small", "medium" and "large" presets.
std::array<int, kScales> backbone_channels(std::string_view preset);

struct AblationVariant {
  std::string label;
  ModelConfig model;
};

/// branches: frp, frp+frnp, frp+frnp+nr on the base encoders.
/// backbones: the base branch flags with every encoder set to each preset width.
std::vector<AblationVariant> ablation_variants(const ModelConfig& base, AblationAxis axis);

struct AblationRun {
  std::uint64_t seed = 0;
  std::optional<double> srcc_abs;
  std::optional<double> krcc_abs;
  int best_epoch = 0;
  std::string error;  // empty on success
  bool ok() const { return error.empty(); }
};

struct AblationRow {
  std::string label;
  bool use_frp = true;
  bool use_frnp = true;
  bool use_nr = true;
  std::array<int, kScales> channels{};
  std::size_t head_input_dim = 0;
  std::string config_hash;
  std::vector<AblationRun> runs;
  /// Means over runs that produced a metric; absent if none did.
  std::optional<double> mean_srcc_abs;
  std::optional<double> mean_krcc_abs;
  bool failed() const;
};

struct AblationReport {
  AblationAxis axis = AblationAxis::branches;
  std::vector<std::uint64_t> seeds;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::vector<AblationRow> rows;
  bool failed() const;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::function<void(const std::string&)> log;
};

/// Trains and evaluates every variant once per seed on one shared split. Each
/// run seeds both parameter init and training with the run seed. Run failures
/// are recorded in the row instead of being thrown.
AblationReport run_ablation(const ExperimentConfig& base, AblationAxis axis, const Dataset& train_set,
                            const Dataset& val_set, const AblationOptions& options = {});

nlohmann::json to_json(const AblationReport& report);
AblationReport ablation_report_from_json(const nlohmann::json& j);
void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report);

}  // namespace triqa
