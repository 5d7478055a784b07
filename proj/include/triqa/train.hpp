#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "triqa/data.hpp"
#include "triqa/model.hpp"

namespace triqa {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr_init = 1e-4;
  double lr_final = 1e-6;
  int batch_size = 8;
  int epochs = 30;
  std::uint64_t seed = 0;
  bool augment = true;
  std::array<int, 2> image_size{192, 192};
  /// Validate every this many epochs; the final epoch is always validated.
  int eval_every = 1;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Cosine decay lr_final + (lr_init - lr_final) (1 + cos(pi t / T)) / 2.
/// Returns exactly lr_init at t = 0 and exactly lr_final at t = T.
double lr_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over trainable parameters. Moment buffers are keyed by
/// parameter name; frozen parameters never get an entry.
class Adam {
 public:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };

  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Applies one update with the parameters' accumulated gradients. Throws
  /// TrainingError naming the parameter if a gradient is not finite.
  void step(std::vector<Parameter>& params, double lr);

  std::int64_t steps() const { return t_; }
  const Moments* moments(const std::string& name) const;
  std::size_t tracked() const { return state_.size(); }

 private:
  AdamOptions options_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

inline void adam_step(std::vector<Parameter>& params, Adam& state, double lr) { state.step(params, lr); }

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_srcc_abs;
  std::optional<double> val_krcc_abs;
  /// Set when validation ran but predictions were constant.
  bool val_degenerate = false;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  int best_epoch = 0;
  std::optional<double> best_val_srcc_abs;
  std::string frozen_hash_before;
  std::string frozen_hash_after;
  std::string checkpoint_path;
};

nlohmann::json to_json(const TrainReport& report);
TrainReport train_report_from_json(const nlohmann::json& j);

/// Decoded, resized images keyed by record path.
class ImageCache {
 public:
  ImageCache(const Dataset& dataset, std::array<int, 2> image_size) : dataset_(&dataset), size_(image_size) {}
  const Tensor& get(const std::string& path);

 private:
  const Dataset* dataset_;
  std::array<int, 2> size_;
  std::unordered_map<std::string, Tensor> images_;
};

struct EvalResult {
  std::optional<double> srcc_abs;
  std::optional<double> krcc_abs;
  bool degenerate = false;
  std::vector<double> predictions;
};

/// Scores every pair without augmentation and reports |SRCC| and |KRCC| of
/// predictions against MOS. Constant predictions set `degenerate` instead.
EvalResult evaluate(const IqaModel& model, const Dataset& dataset, std::array<int, 2> image_size);
EvalResult evaluate(const IqaModel& model, const Dataset& dataset, ImageCache& cache);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  IqaModel model;
  TrainReport report;
};

/// Seeded shuffle per epoch, batches of cfg.batch_size (last partial batch
/// kept), flip augmentation, one Adam step per batch, validation per epoch.
/// Returns the checkpoint with the best validation |SRCC|. The head's output
/// bias starts at the mean training label.
TrainResult train(IqaModel model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

struct PredictionRow {
  std::string reference_path;
  std::string distorted_path;
  double mos = 0.0;
  double pred = 0.0;
  friend bool operator==(const PredictionRow&, const PredictionRow&) = default;
};

void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);
std::vector<PredictionRow> prediction_rows(const Dataset& dataset, const std::vector<double>& predictions);

}  // namespace triqa
