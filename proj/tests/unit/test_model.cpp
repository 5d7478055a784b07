#include <gtest/gtest.h>

#include "test_util.hpp"
#include "triqa/grad_check.hpp"
#include "triqa/ops.hpp"
#include "triqa/model.hpp"

using namespace triqa;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  for (auto* e : {&c.frp_encoder, &c.frnp_encoder, &c.nr_encoder}) {
    e->channels = {2, 3, 4, 5};
    e->convs_per_block = 1;
  }
  c.fc_dims = {6, 4};
  return c;
}

Var<float> image(std::size_t n, std::size_t size, std::uint64_t seed) {
  return Var<float>::leaf(random_tensor({n, 3, size, size}, seed));
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EncoderConfig e;
  EXPECT_NO_THROW(e.validate());
  EXPECT_EQ(e.output_dim(), 240u);
  e.kernel = 4;
  EXPECT_THROW(e.validate(), std::invalid_argument);
  e = {};
  e.channels[2] = 0;
  EXPECT_THROW(e.validate(), std::invalid_argument);
  e = {};
  e.convs_per_block = 0;
  EXPECT_THROW(e.validate(), std::invalid_argument);
}

TEST(ModelConfig, HeadInputDimTracksBranches) {
  ModelConfig c;
  EXPECT_EQ(c.head_input_dim(), 720u);
  c.use_nr = false;
  EXPECT_EQ(c.head_input_dim(), 480u);
  c.use_frnp = false;
  EXPECT_EQ(c.head_input_dim(), 240u);
  c.use_frp = false;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ModelConfig, DisablingBranchShrinksByItsDim) {
  ModelConfig c = tiny_config();
  c.nr_encoder.channels = {1, 1, 1, 1};
  const auto full = c.head_input_dim();
  for (Branch b : {Branch::frp, Branch::frnp, Branch::nr}) {
    ModelConfig d = c;
    const EncoderConfig* enc = nullptr;
    switch (b) {
      case Branch::frp: d.use_frp = false; enc = &c.frp_encoder; break;
      case Branch::frnp: d.use_frnp = false; enc = &c.frnp_encoder; break;
      case Branch::nr: d.use_nr = false; enc = &c.nr_encoder; break;
    }
    EXPECT_EQ(d.head_input_dim(), full - enc->output_dim()) << branch_name(b);
  }
}

TEST(Encoder, PyramidShapes) {
  const auto model = init_model(ModelConfig{}, 1);
  const auto enc = *model.encoder(Branch::frnp);
  NoGradGuard g;
  const auto p = encoder_forward(enc, image(1, 192, 3));
  EXPECT_EQ(p.features[0].shape(), (Shape{1, 16, 96, 96}));
  EXPECT_EQ(p.features[1].shape(), (Shape{1, 32, 48, 48}));
  EXPECT_EQ(p.features[2].shape(), (Shape{1, 64, 24, 24}));
  EXPECT_EQ(p.features[3].shape(), (Shape{1, 128, 12, 12}));
  const auto small = encoder_forward(enc, image(1, 32, 3));
  EXPECT_EQ(small.features[3].shape(), (Shape{1, 128, 2, 2}));
}

TEST(Encoder, RejectsBadInput) {
  const auto model = init_model(tiny_config(), 1);
  const auto enc = *model.encoder(Branch::nr);
  EXPECT_THROW(encoder_forward(enc, image(1, 24, 1)), ShapeError);
  EXPECT_THROW(encoder_forward(enc, Var<float>::leaf(Tensor({1, 1, 32, 32}))), ShapeError);
}

TEST(Encoder, Deterministic) {
  const auto model = init_model(tiny_config(), 1);
  const auto enc = *model.encoder(Branch::frp);
  const Tensor x = random_tensor({2, 3, 32, 32}, 5);
  const auto a = encoder_forward(enc, Var<float>::leaf(x));
  const auto b = encoder_forward(enc, Var<float>::leaf(Tensor(x)));
  for (std::size_t s = 0; s < kScales; ++s) EXPECT_EQ(a.features[s].value().data, b.features[s].value().data);
}

TEST(FrBranch, ZeroIdentityAndSymmetry) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto model = init_model(tiny_config(), seed);
    for (Branch b : {Branch::frp, Branch::frnp}) {
      const auto enc = *model.encoder(b);
      const auto img = image(2, 32, seed + 100);
      const auto same = fr_branch(enc, img, Var<float>::leaf(img.value()));
      EXPECT_EQ(same.shape(), (Shape{2, 14, 1, 1}));
      for (float v : same.value().data) EXPECT_EQ(v, 0.0f);
      const auto other = image(2, 32, seed + 200);
      const auto ab = fr_branch(enc, img, other).value().data;
      EXPECT_EQ(ab, fr_branch(enc, other, img).value().data);
      for (float v : ab) EXPECT_GE(v, 0.0f);
    }
  }
}

TEST(FrBranch, DefaultDimAndShapeMismatch) {
  const auto model = init_model(ModelConfig{}, 0);
  NoGradGuard g;
  EXPECT_EQ(fr_branch(*model.encoder(Branch::frp), image(1, 32, 1), image(1, 32, 2)).shape().c, 240u);
  EXPECT_THROW(fr_branch(*model.encoder(Branch::frp), image(1, 32, 1), image(1, 48, 2)), ShapeError);
}

TEST(NrBranch, DimAndZeroInput) {
  ModelConfig c = tiny_config();
  auto model = init_model(c, 3);
  EXPECT_EQ(nr_branch(*model.encoder(Branch::nr), image(1, 32, 1)).shape().c, 14u);
  for (auto& p : model.parameters()) {
    if (p.name().starts_with("nr.") && p.name().ends_with(".bias")) std::fill(p.mutable_value().data.begin(), p.mutable_value().data.end(), 0.0f);
  }
  const auto zero = nr_branch(*model.encoder(Branch::nr), Var<float>::leaf(Tensor({1, 3, 32, 32})));
  for (float v : zero.value().data) EXPECT_EQ(v, 0.0f);
}

TEST(NrBranch, IndependentOfReference) {
  ModelConfig c = tiny_config();
  c.use_frp = c.use_frnp = false;
  const auto model = init_model(c, 4);
  const auto q = image(2, 32, 1);
  EXPECT_EQ(model.forward(q, image(2, 32, 2)).value().data, model.forward(q, image(2, 32, 3)).value().data);
  const auto full = init_model(tiny_config(), 4);
  EXPECT_EQ(full.extract(q, image(2, 32, 2)).f_nr->value().data, full.extract(q, image(2, 32, 3)).f_nr->value().data);
}

TEST(Head, ZeroWeightsGiveFinalBias) {
  auto model = init_model(tiny_config(), 1);
  for (auto& p : model.parameters()) {
    if (p.name().starts_with("head.")) std::fill(p.mutable_value().data.begin(), p.mutable_value().data.end(), 0.0f);
  }
  model.find("head.fc3.bias")->mutable_value().data[0] = 2.5f;
  const auto p = model.forward(image(3, 32, 1), image(3, 32, 2));
  EXPECT_EQ(p.value().data, (std::vector<float>{2.5f, 2.5f, 2.5f}));
}

TEST(Head, RejectsDimMismatch) {
  const auto model = init_model(tiny_config(), 1);
  BranchFeatures<float> f;
  f.d_frp = Var<float>::leaf(Tensor({1, 13, 1, 1}));
  EXPECT_THROW(fuse_and_score(f, model.head()), ShapeError);
  EXPECT_THROW(fuse_and_score(BranchFeatures<float>{}, model.head()), ModelError);
}

TEST(Model, IdenticalPairCollapsesToHeadOfZero) {
  ModelConfig c = tiny_config();
  c.use_nr = false;
  const auto model = init_model(c, 2);
  const auto a = model.forward(image(1, 32, 1), image(1, 32, 1)).value().data;
  const auto b = model.forward(image(1, 32, 9), image(1, 32, 9)).value().data;
  EXPECT_EQ(a, b);
  BranchFeatures<float> zeros;
  zeros.d_frp = Var<float>::leaf(Tensor({1, 14, 1, 1}));
  zeros.d_frnp = Var<float>::leaf(Tensor({1, 14, 1, 1}));
  EXPECT_EQ(fuse_and_score(zeros, model.head()).value().data, a);
}

TEST(Model, FiniteOutputAndShape) {
  const auto model = init_model(ModelConfig{}, 1);
  NoGradGuard g;
  const auto p = model.forward(image(2, 32, 1), image(2, 32, 2));
  EXPECT_EQ(p.shape(), (Shape{2, 1, 1, 1}));
  EXPECT_TRUE(p.value().all_finite());
}

TEST(Init, SeedDeterminismAndTrainableFlags) {
  const auto a = init_model(tiny_config(), 7);
  const auto b = init_model(tiny_config(), 7);
  const auto c = init_model(tiny_config(), 8);
  EXPECT_EQ(parameter_hash(a), parameter_hash(b));
  EXPECT_NE(parameter_hash(a), parameter_hash(c));
  // The frozen encoder does not depend on the trainable seed.
  EXPECT_EQ(frozen_parameter_hash(a), frozen_parameter_hash(c));
  for (const auto& p : a.parameters()) {
    EXPECT_EQ(p.trainable(), !p.name().starts_with("frp.")) << p.name();
  }
  EXPECT_NE(a.find("head.fc1.weight"), nullptr);
  EXPECT_EQ(a.find("frp.s1.conv2.weight"), nullptr);
  EXPECT_NE(a.find("frp.s4.conv1.bias"), nullptr);
}

TEST(Init, HeFanInScale) {
  ModelConfig c;
  const auto m = init_model(c, 3);
  const auto& w = m.find("frnp.s3.conv1.weight")->value();
  double sq = 0.0;
  for (float v : w.data) sq += static_cast<double>(v) * v;
  const double var = sq / static_cast<double>(w.numel());
  const double expected = 2.0 / (32.0 * 9.0);
  EXPECT_NEAR(var, expected, 0.1 * expected);
  for (float v : m.find("frnp.s3.conv1.bias")->value().data) EXPECT_EQ(v, 0.0f);
}

TEST(Init, FrpWeightsFromFile) {
  const auto dir = testutil::scratch_dir("model_frp");
  ModelConfig c = tiny_config();
  const auto donor = init_model(c, 1);
  std::vector<NamedTensor> frp;
  for (const auto& p : donor.parameters()) {
    if (!p.trainable()) frp.push_back({p.name(), p.value()});
  }
  save_weights(dir / "frp.bin", frp);
  c.frp_weights = dir / "frp.bin";
  const auto loaded = init_model(c, 99);
  EXPECT_EQ(frozen_parameter_hash(loaded), frozen_parameter_hash(donor));
  frp.pop_back();
  save_weights(dir / "short.bin", frp);
  c.frp_weights = dir / "short.bin";
  EXPECT_THROW(init_model(c, 1), ModelError);
  c.frp_weights = dir / "missing.bin";
  EXPECT_THROW(init_model(c, 1), WeightsFormatError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = testutil::scratch_dir("model_ckpt");
  ModelConfig c = tiny_config();
  c.use_nr = false;
  c.frp_weights = FrpSeed{42};
  const auto model = init_model(c, 5);
  save_checkpoint(dir / "model.bin", model, {32, 48});
  EXPECT_TRUE(std::filesystem::exists(dir / "model.bin.json"));
  const auto ck = load_checkpoint(dir / "model.bin");
  EXPECT_EQ(ck.image_size, (std::array<int, 2>{32, 48}));
  EXPECT_EQ(ck.model.config(), c);
  EXPECT_EQ(parameter_hash(ck.model), parameter_hash(model));
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(ck.model.parameters()[i].trainable(), model.parameters()[i].trainable());
  }
}

TEST(Checkpoint, IncompatibleWeightsRejected) {
  const auto model = init_model(tiny_config(), 5);
  ModelConfig other = tiny_config();
  other.nr_encoder.channels = {2, 3, 4, 6};
  EXPECT_THROW(IqaModel::from_weights(other, model.named_tensors()), ModelError);
  other = tiny_config();
  other.use_nr = false;
  EXPECT_THROW(IqaModel::from_weights(other, model.named_tensors()), ModelError);
}

TEST(Model, PublicConstructorChecksLayout) {
  const auto model = init_model(tiny_config(), 5);
  auto params = model.parameters();
  params.pop_back();
  EXPECT_THROW(IqaModel(tiny_config(), params), ModelError);
}

TEST(Model, CopiesAreIndependent) {
  auto a = init_model(tiny_config(), 1);
  IqaModel b = a;
  b.find("head.fc3.bias")->mutable_value().data[0] = 9.0f;
  EXPECT_NE(a.find("head.fc3.bias")->value().data[0], 9.0f);
}

TEST(Model, EndToEndGradCheck) {
  ModelConfig c = tiny_config();
  const auto model = init_model(c, 11);
  const auto dmodel = model.cast<double>();
  const Tensor q = random_tensor({2, 3, 32, 32}, 1), r = random_tensor({2, 3, 32, 32}, 2);
  const Tensor target({2, 1, 1, 1}, {3.0f, 1.5f});
  CheckTarget<float> a;
  CheckTarget<double> n;
  for (const auto& p : model.parameters()) {
    if (p.trainable()) a.leaves.push_back(p.var());
  }
  for (const auto& p : dmodel.parameters()) {
    if (p.trainable()) n.leaves.push_back(p.var());
  }
  a.loss = [&] { return mse_loss(model.forward(Var<float>::leaf(q), Var<float>::leaf(r)), target); };
  n.loss = [&] {
    return mse_loss(dmodel.forward(Var<double>::leaf(q.cast<double>()), Var<double>::leaf(r.cast<double>())),
                    target.cast<double>());
  };
  GradCheckOptions opts;
  opts.max_elements_per_leaf = 6;
  // Small steps keep the 64-bit differences clear of ReLU, max-pool and |.| kinks.
  opts.epsilon = 1e-6;
  const auto res = grad_check(a, n, opts);
  EXPECT_GT(res.probed, 0u);
  EXPECT_LT(res.max_rel_error, 1e-3);
}
