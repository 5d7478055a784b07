#include "triqa/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "triqa/metrics.hpp"
#include "triqa/ops.hpp"

namespace triqa {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr_init > 0.0) || !(lr_final > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (lr_final > lr_init) throw std::invalid_argument("lr_final must not exceed lr_init");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  for (int d : image_size) {
    if (d <= 0 || d % static_cast<int>(kSpatialMultiple) != 0) {
      throw std::invalid_argument("image_size dims must be positive multiples of 16");
    }
  }
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0) throw std::invalid_argument("lr_schedule: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("lr_schedule: step outside [0, total_steps]");
  if (step == 0) return cfg.lr_init;
  if (step == total_steps) return cfg.lr_final;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  const double lr = cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(phase));
  return std::clamp(lr, cfg.lr_final, cfg.lr_init);
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(std::vector<Parameter>& params, double lr) {
  for (const auto& p : params) {
    if (!p.trainable()) continue;
    for (float g : p.grad()) {
      if (!std::isfinite(g)) throw TrainingError("adam: non-finite gradient in parameter '" + p.name() + "'");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    if (!p.trainable()) continue;
    auto& value = p.mutable_value().data;
    auto [it, inserted] = state_.try_emplace(p.name());
    Moments& mom = it->second;
    if (inserted) {
      mom.m.assign(value.size(), 0.0f);
      mom.v.assign(value.size(), 0.0f);
    }
    const auto grad = p.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double m = options_.beta1 * mom.m[i] + (1.0 - options_.beta1) * g;
      const double v = options_.beta2 * mom.v[i] + (1.0 - options_.beta2) * g * g;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + options_.epsilon);
      value[i] = static_cast<float>(static_cast<double>(value[i]) - update);
    }
  }
}

const Adam::Moments* Adam::moments(const std::string& name) const {
  const auto it = state_.find(name);
  return it == state_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace

json to_json(const TrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_srcc_abs", optional_json(e.val_srcc_abs)},
                      {"val_krcc_abs", optional_json(e.val_krcc_abs)},
                      {"val_degenerate", e.val_degenerate},
                      {"seconds", e.seconds}});
  }
  return {{"epochs", epochs},
          {"step_losses", report.step_losses},
          {"best_epoch", report.best_epoch},
          {"best_val_srcc_abs", optional_json(report.best_val_srcc_abs)},
          {"frozen_hash_before", report.frozen_hash_before},
          {"frozen_hash_after", report.frozen_hash_after},
          {"checkpoint_path", report.checkpoint_path}};
}

TrainReport train_report_from_json(const json& j) {
  TrainReport r;
  for (const auto& e : j.at("epochs")) {
    r.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), optional_from(e.at("val_srcc_abs")),
                        optional_from(e.at("val_krcc_abs")), e.at("val_degenerate").get<bool>(),
                        e.at("seconds").get<double>()});
  }
  r.step_losses = j.at("step_losses").get<std::vector<double>>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.best_val_srcc_abs = optional_from(j.at("best_val_srcc_abs"));
  r.frozen_hash_before = j.at("frozen_hash_before").get<std::string>();
  r.frozen_hash_after = j.at("frozen_hash_after").get<std::string>();
  r.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

const Tensor& ImageCache::get(const std::string& path) {
  auto it = images_.find(path);
  if (it != images_.end()) return it->second;
  Tensor image = load_image(dataset_->resolve(path));
  image = resize_bilinear(image, static_cast<std::size_t>(size_[0]), static_cast<std::size_t>(size_[1]));
  return images_.emplace(path, std::move(image)).first->second;
}

namespace {

constexpr std::size_t kEvalBatch = 8;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

EvalResult evaluate(const IqaModel& model, const Dataset& dataset, ImageCache& cache) {
  dataset.require_non_empty("evaluation");
  EvalResult result;
  result.predictions.reserve(dataset.size());
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < dataset.size(); start += kEvalBatch) {
    const std::size_t end = std::min(start + kEvalBatch, dataset.size());
    std::vector<const Tensor*> queries, refs;
    for (std::size_t i = start; i < end; ++i) {
      queries.push_back(&cache.get(dataset.records[i].distorted_path));
      refs.push_back(&cache.get(dataset.records[i].reference_path));
    }
    const auto pred = model.forward(Var<float>::leaf(stack_batch(queries)), Var<float>::leaf(stack_batch(refs)));
    for (float p : pred.value().data) result.predictions.push_back(static_cast<double>(p));
  }
  std::vector<double> labels;
  labels.reserve(dataset.size());
  for (const auto& r : dataset.records) labels.push_back(r.mos);
  try {
    result.srcc_abs = std::abs(srcc(result.predictions, labels));
    result.krcc_abs = std::abs(krcc(result.predictions, labels));
  } catch (const UndefinedCorrelationError&) {
    result.srcc_abs.reset();
    result.krcc_abs.reset();
    result.degenerate = true;
  }
  return result;
}

EvalResult evaluate(const IqaModel& model, const Dataset& dataset, std::array<int, 2> image_size) {
  ImageCache cache(dataset, image_size);
  return evaluate(model, dataset, cache);
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(IqaModel model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  train_set.require_non_empty("training");
  val_set.require_non_empty("validation");

  ImageCache train_cache(train_set, cfg.image_size);
  ImageCache val_cache(val_set, cfg.image_size);

  double label_mean = 0.0;
  for (const auto& r : train_set.records) label_mean += r.mos;
  label_mean /= static_cast<double>(train_set.size());
  if (auto* out_bias = model.find("head.fc3.bias")) out_bias->mutable_value().data[0] = static_cast<float>(label_mean);

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches_per_epoch = (train_set.size() + batch - 1) / batch;
  const auto total_steps = static_cast<std::int64_t>(batches_per_epoch) * cfg.epochs;
  // The last update uses exactly lr_final.
  const std::int64_t schedule_span = std::max<std::int64_t>(total_steps - 1, 1);

  TrainReport report;
  report.frozen_hash_before = frozen_parameter_hash(model);
  Adam adam;
  std::optional<IqaModel> best;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      std::vector<Tensor> queries, refs;
      BasicTensor<float> target({std::min(batch, order.size() - b * batch), 1, 1, 1});
      for (std::size_t k = 0; k < target.shape.n; ++k) {
        const std::size_t idx = order[b * batch + k];
        const auto& rec = train_set.records[idx];
        const Tensor& q = train_cache.get(rec.distorted_path);
        const Tensor& r = train_cache.get(rec.reference_path);
        if (cfg.augment) {
          std::mt19937_64 flip_rng(mix_seed(epoch_seed, idx));
          auto [fq, fr] = augment_flip(q, r, flip_rng);
          queries.push_back(std::move(fq));
          refs.push_back(std::move(fr));
        } else {
          queries.push_back(q);
          refs.push_back(r);
        }
        target.data[k] = static_cast<float>(rec.mos);
      }
      std::vector<const Tensor*> qp, rp;
      for (std::size_t k = 0; k < queries.size(); ++k) {
        qp.push_back(&queries[k]);
        rp.push_back(&refs[k]);
      }

      for (auto& p : model.parameters()) p.zero_grad();
      const auto pred = model.forward(Var<float>::leaf(stack_batch(qp)), Var<float>::leaf(stack_batch(rp)));
      const auto loss = mse_loss(pred, target);
      const double loss_value = loss.value().data[0];
      if (!std::isfinite(loss_value) || loss_value > 1e6) {
        throw TrainingError("training diverged at step " + std::to_string(step) + " (loss " +
                            std::to_string(loss_value) + ")");
      }
      backward(loss);
      adam.step(model.parameters(), lr_schedule(std::min(step, schedule_span), schedule_span, cfg));
      ++step;
      loss_sum += loss_value;
      report.step_losses.push_back(loss_value);
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_loss = loss_sum / static_cast<double>(batches_per_epoch);
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
      const EvalResult eval = evaluate(model, val_set, val_cache);
      record.val_srcc_abs = eval.srcc_abs;
      record.val_krcc_abs = eval.krcc_abs;
      record.val_degenerate = eval.degenerate;
      if (eval.srcc_abs && (!report.best_val_srcc_abs || *eval.srcc_abs > *report.best_val_srcc_abs)) {
        report.best_val_srcc_abs = eval.srcc_abs;
        report.best_epoch = epoch + 1;
        best = model;
      }
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
  }

  report.frozen_hash_after = frozen_parameter_hash(model);
  if (!best) {
    report.best_epoch = cfg.epochs;
    best = std::move(model);
  }
  return {std::move(*best), std::move(report)};
}

// ---------------------------------------------------------------------------
// Prediction CSV

std::vector<PredictionRow> prediction_rows(const Dataset& dataset, const std::vector<double>& predictions) {
  if (predictions.size() != dataset.size()) throw std::invalid_argument("prediction count does not match dataset");
  std::vector<PredictionRow> rows;
  rows.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset.records[i];
    rows.push_back({r.reference_path, r.distorted_path, r.mos, predictions[i]});
  }
  return rows;
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionRow>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write predictions '" + path.string() + "'");
  os << "ref_path,dist_path,mos,pred\n";
  for (const auto& r : rows) {
    os << csv_escape(r.reference_path) << ',' << csv_escape(r.distorted_path) << ',' << format_real(r.mos) << ','
       << format_real(r.pred) << '\n';
  }
  if (!os) throw DataError("write failed for predictions '" + path.string() + "'");
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read predictions '" + path.string() + "'");
  std::vector<PredictionRow> rows;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(is, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_number == 1) {
      if (line != "ref_path,dist_path,mos,pred") throw DataError("line 1: expected header 'ref_path,dist_path,mos,pred'");
      continue;
    }
    if (line.empty()) continue;
    const auto fields = csv_split(line, line_number);
    if (fields.size() != 4) throw DataError("line " + std::to_string(line_number) + ": expected 4 fields");
    rows.push_back({fields[0], fields[1], parse_real(fields[2], line_number, "mos"),
                    parse_real(fields[3], line_number, "pred")});
  }
  if (line_number == 0) throw DataError("line 1: missing header in '" + path.string() + "'");
  return rows;
}

}  // namespace triqa
