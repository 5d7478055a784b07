#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "triqa/synth.hpp"
#include "triqa/train.hpp"

using namespace triqa;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  for (auto* e : {&c.frp_encoder, &c.frnp_encoder, &c.nr_encoder}) {
    e->channels = {2, 3, 4, 5};
    e->convs_per_block = 1;
  }
  c.fc_dims = {8, 4};
  return c;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.image_size = {32, 32};
  t.lr_init = 1e-3;
  t.lr_final = 1e-5;
  return t;
}

const Dataset& tiny_benchmark() {
  static const Dataset ds = [] {
    BenchmarkOptions o;
    o.out_dir = testutil::scratch_dir("train_bench");
    o.n_references = 3;
    o.kinds = {DistortionKind::additive_gaussian_noise, DistortionKind::gaussian_blur};
    o.image_size = 32;
    o.seed = 5;
    return make_synthetic_benchmark(o);
  }();
  return ds;
}

Parameter scalar_param(const std::string& name, float value, bool trainable) {
  return Parameter(name, Tensor({1, 1, 1, 1}, value), trainable);
}

void set_grad(Parameter& p, float g) {
  auto& buf = p.var().node()->grad_buffer();
  std::fill(buf.begin(), buf.end(), g);
}

}  // namespace

TEST(LrSchedule, EndpointsAreExact) {
  const TrainConfig cfg;
  for (std::int64_t total : {1, 7, 480, 2000}) {
    EXPECT_EQ(lr_schedule(0, total, cfg), 1e-4);
    EXPECT_EQ(lr_schedule(total, total, cfg), 1e-6);
  }
  EXPECT_NEAR(lr_schedule(50, 100, cfg), 5.05e-5, 1e-18);
}

TEST(LrSchedule, MonotoneNonIncreasing) {
  const TrainConfig cfg;
  double prev = lr_schedule(0, 997, cfg);
  for (std::int64_t t = 1; t <= 997; ++t) {
    const double lr = lr_schedule(t, 997, cfg);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, cfg.lr_final);
    prev = lr;
  }
}

TEST(LrSchedule, Errors) {
  const TrainConfig cfg;
  EXPECT_THROW(lr_schedule(0, 0, cfg), std::invalid_argument);
  EXPECT_THROW(lr_schedule(-1, 10, cfg), std::invalid_argument);
  EXPECT_THROW(lr_schedule(11, 10, cfg), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr_final = 1e-3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.image_size = {100, 96};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  std::vector<Parameter> params{scalar_param("w", 0.75f, true)};
  set_grad(params[0], 0.0f);
  Adam adam;
  adam.step(params, 1e-2);
  EXPECT_EQ(params[0].value().data[0], 0.75f);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, FirstStepIsMinusLr) {
  std::vector<Parameter> params{scalar_param("w", 1.0f, true)};
  set_grad(params[0], 1.0f);
  Adam adam;
  adam.step(params, 1e-3);
  EXPECT_NEAR(params[0].value().data[0], 1.0f - 1e-3f, 1e-7);
  // Constant gradient keeps m_hat / sqrt(v_hat) at one.
  for (int i = 0; i < 9; ++i) adam.step(params, 1e-3);
  EXPECT_NEAR(params[0].value().data[0], 1.0f - 1e-2f, 1e-6);
}

TEST(Adam, MatchesReferenceRecurrence) {
  std::vector<Parameter> params{scalar_param("w", 0.5f, true)};
  Adam adam;
  double w = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -1.2, 0.05, 2.0, -0.7};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    set_grad(params[0], static_cast<float>(g));
    adam.step(params, 1e-2);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 1e-2 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(params[0].value().data[0], w, 1e-6);
  }
}

TEST(Adam, FrozenParametersUntouchedAndUntracked) {
  std::vector<Parameter> params{scalar_param("frozen", 0.25f, false), scalar_param("live", 0.25f, true)};
  set_grad(params[0], 5.0f);
  Adam adam;
  for (int i = 0; i < 100; ++i) {
    set_grad(params[1], 1.0f);
    adam.step(params, 1e-2);
  }
  EXPECT_EQ(params[0].value().data[0], 0.25f);
  EXPECT_NE(params[1].value().data[0], 0.25f);
  EXPECT_EQ(adam.moments("frozen"), nullptr);
  ASSERT_NE(adam.moments("live"), nullptr);
  EXPECT_EQ(adam.tracked(), 1u);
}

TEST(Adam, NanGradientNamesParameter) {
  std::vector<Parameter> params{scalar_param("head.fc2.weight", 1.0f, true)};
  set_grad(params[0], std::numeric_limits<float>::quiet_NaN());
  Adam adam;
  try {
    adam.step(params, 1e-3);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("head.fc2.weight"), std::string::npos);
  }
  EXPECT_EQ(params[0].value().data[0], 1.0f);
  EXPECT_EQ(adam.steps(), 0);
}

TEST(Train, ReportShapeAndFrozenContract) {
  const auto [train_set, val_set] = split(tiny_benchmark(), SplitSpec{0.67, 1, true});
  ASSERT_EQ(train_set.size(), 20u);
  const auto model = init_model(tiny_model(), 3);
  const auto before_trainable = parameter_hash(model);
  int hook_calls = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord&) { ++hook_calls; };
  const auto result = train(model, train_set, val_set, tiny_train(3), hooks);
  const auto& rep = result.report;
  EXPECT_EQ(hook_calls, 3);
  ASSERT_EQ(rep.epochs.size(), 3u);
  EXPECT_EQ(rep.step_losses.size(), 15u);  // 20 pairs, batch 4
  for (std::size_t e = 0; e < rep.epochs.size(); ++e) {
    EXPECT_EQ(rep.epochs[e].epoch, static_cast<int>(e) + 1);
    ASSERT_TRUE(rep.epochs[e].val_srcc_abs.has_value());
    EXPECT_GE(*rep.epochs[e].val_srcc_abs, 0.0);
    EXPECT_LE(*rep.epochs[e].val_srcc_abs, 1.0);
    EXPECT_GE(*rep.epochs[e].val_krcc_abs, 0.0);
    EXPECT_LE(*rep.epochs[e].val_krcc_abs, 1.0);
  }
  EXPECT_EQ(rep.frozen_hash_before, rep.frozen_hash_after);
  EXPECT_EQ(rep.frozen_hash_before, frozen_parameter_hash(model));
  EXPECT_EQ(frozen_parameter_hash(result.model), frozen_parameter_hash(model));
  EXPECT_NE(parameter_hash(result.model), before_trainable);
  ASSERT_TRUE(rep.best_val_srcc_abs.has_value());
  EXPECT_EQ(*rep.best_val_srcc_abs, *rep.epochs[static_cast<std::size_t>(rep.best_epoch - 1)].val_srcc_abs);
}

TEST(Train, PartialFinalBatchKept) {
  Dataset small = tiny_benchmark();
  small.records.resize(10);
  auto cfg = tiny_train(2);
  cfg.eval_every = 5;
  const auto result = train(init_model(tiny_model(), 1), small, small, cfg);
  EXPECT_EQ(result.report.step_losses.size(), 6u);  // 4 + 4 + 2 per epoch
  // Only the final epoch is validated when eval_every exceeds the epoch count.
  EXPECT_FALSE(result.report.epochs[0].val_srcc_abs.has_value());
  EXPECT_TRUE(result.report.epochs[1].val_srcc_abs.has_value());
}

TEST(Train, DeterministicAcrossRuns) {
  const auto [train_set, val_set] = split(tiny_benchmark(), SplitSpec{0.67, 1, true});
  const auto a = train(init_model(tiny_model(), 9), train_set, val_set, tiny_train(2));
  const auto b = train(init_model(tiny_model(), 9), train_set, val_set, tiny_train(2));
  EXPECT_EQ(a.report.step_losses, b.report.step_losses);
  EXPECT_EQ(parameter_hash(a.model), parameter_hash(b.model));
  auto other = tiny_train(2);
  other.seed = 1;
  const auto c = train(init_model(tiny_model(), 9), train_set, val_set, other);
  EXPECT_NE(a.report.step_losses, c.report.step_losses);
}

TEST(Train, HeadBiasStartsAtLabelMean) {
  Dataset ds = tiny_benchmark();
  double mean = 0.0;
  for (const auto& r : ds.records) mean += r.mos;
  mean /= static_cast<double>(ds.size());
  auto cfg = tiny_train(1);
  cfg.lr_init = cfg.lr_final = 1e-12;
  const auto result = train(init_model(tiny_model(), 2), ds, ds, cfg);
  EXPECT_NEAR(result.model.find("head.fc3.bias")->value().data[0], mean, 1e-5);
}

TEST(Train, DivergenceGuard) {
  Dataset ds = tiny_benchmark();
  ds.records.resize(8);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.records[i].mos = i % 2 ? 1e4 : 0.0;
  EXPECT_THROW(train(init_model(tiny_model(), 2), ds, ds, tiny_train(1)), TrainingError);
}

TEST(Train, RejectsEmptyAndInvalid) {
  const Dataset& ds = tiny_benchmark();
  EXPECT_THROW(train(init_model(tiny_model(), 2), Dataset{}, ds, tiny_train(1)), DataError);
  EXPECT_THROW(train(init_model(tiny_model(), 2), ds, Dataset{}, tiny_train(1)), DataError);
  auto bad = tiny_train(1);
  bad.image_size = {30, 32};
  EXPECT_THROW(train(init_model(tiny_model(), 2), ds, ds, bad), std::invalid_argument);
}

TEST(Evaluate, ConstantPredictionsAreDegenerate) {
  auto model = init_model(tiny_model(), 2);
  for (auto& p : model.parameters()) {
    if (p.name().starts_with("head.")) std::fill(p.mutable_value().data.begin(), p.mutable_value().data.end(), 0.0f);
  }
  const auto r = evaluate(model, tiny_benchmark(), {32, 32});
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.srcc_abs.has_value());
  EXPECT_EQ(r.predictions.size(), tiny_benchmark().size());
}

TEST(Evaluate, BatchInvariantPredictions) {
  const auto model = init_model(tiny_model(), 4);
  const Dataset& ds = tiny_benchmark();
  const auto all = evaluate(model, ds, {32, 32});
  Dataset one;
  one.base_dir = ds.base_dir;
  one.records = {ds.records[13], ds.records[0]};
  const auto pair = evaluate(model, one, {32, 32});
  EXPECT_EQ(pair.predictions[0], all.predictions[13]);
  EXPECT_EQ(pair.predictions[1], all.predictions[0]);
}

TEST(Evaluate, ResizesToRequestedSize) {
  const auto model = init_model(tiny_model(), 4);
  const auto r = evaluate(model, tiny_benchmark(), {16, 48});
  EXPECT_EQ(r.predictions.size(), tiny_benchmark().size());
}

TEST(Report, JsonRoundTrip) {
  TrainReport rep;
  rep.epochs = {{1, 0.5, 0.25, 0.125, false, 1.5}, {2, 1.0 / 3.0, std::nullopt, std::nullopt, true, 0.1}};
  rep.step_losses = {1.0, 0.1 + 0.2, 1e-300};
  rep.best_epoch = 1;
  rep.best_val_srcc_abs = 0.25;
  rep.frozen_hash_before = rep.frozen_hash_after = "ab";
  rep.checkpoint_path = "out/model.bin";
  const auto j = to_json(rep);
  const auto back = train_report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.step_losses, rep.step_losses);
  EXPECT_FALSE(back.epochs[1].val_srcc_abs.has_value());
}

TEST(Predictions, CsvRoundTrip) {
  const auto dir = testutil::scratch_dir("predictions");
  const std::vector<PredictionRow> rows{{"a,b.ppm", "q.ppm", 4.2, 0.1 + 0.2}, {"r.ppm", "s\"t\".ppm", 1.0, -1e-17}};
  write_predictions_csv(dir / "p.csv", rows);
  EXPECT_EQ(read_predictions_csv(dir / "p.csv"), rows);
  EXPECT_THROW(prediction_rows(tiny_benchmark(), {1.0}), std::invalid_argument);
  const auto built = prediction_rows(tiny_benchmark(), std::vector<double>(tiny_benchmark().size(), 2.0));
  EXPECT_EQ(built[3].distorted_path, tiny_benchmark().records[3].distorted_path);
}
