#include "triqa/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "triqa/config.hpp"
#include "triqa/hash.hpp"
#include "triqa/ops.hpp"

namespace triqa {

namespace fs = std::filesystem;

std::size_t EncoderConfig::output_dim() const {
  std::size_t dim = 0;
  for (int c : channels) dim += static_cast<std::size_t>(c);
  return dim;
}

void EncoderConfig::validate() const {
  for (int c : channels) {
    if (c <= 0) throw std::invalid_argument("encoder channels must be positive");
  }
  if (convs_per_block <= 0) throw std::invalid_argument("convs_per_block must be positive");
  if (kernel <= 0 || kernel % 2 == 0) throw std::invalid_argument("kernel must be a positive odd integer");
}

std::size_t ModelConfig::head_input_dim() const {
  return (use_frp ? frp_encoder.output_dim() : 0) + (use_frnp ? frnp_encoder.output_dim() : 0) +
         (use_nr ? nr_encoder.output_dim() : 0);
}

void ModelConfig::validate() const {
  if (!use_frp && !use_frnp && !use_nr) throw std::invalid_argument("at least one branch must be enabled");
  frp_encoder.validate();
  frnp_encoder.validate();
  nr_encoder.validate();
  for (int d : fc_dims) {
    if (d <= 0) throw std::invalid_argument("fc_dims must be positive");
  }
}

std::string_view branch_name(Branch b) {
  switch (b) {
    case Branch::frp: return "frp";
    case Branch::frnp: return "frnp";
    case Branch::nr: return "nr";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Branch computations

namespace {

template <typename T>
void require_image(const Var<T>& image, const char* what) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError(std::string(what) + ": expected 3 channels, got " + s.str());
  if (s.h == 0 || s.w == 0 || s.h % kSpatialMultiple != 0 || s.w % kSpatialMultiple != 0) {
    throw ShapeError(std::string(what) + ": height and width must be positive multiples of 16, got " + s.str());
  }
}

}  // namespace

template <typename T>
FeaturePyramid<T> encoder_forward(const EncoderView<T>& encoder, const Var<T>& image) {
  require_image(image, "encoder_forward");
  const auto per_block = static_cast<std::size_t>(encoder.config.convs_per_block);
  if (encoder.convs.size() != kScales * per_block) throw ModelError("encoder_forward: inconsistent encoder view");
  const int padding = encoder.config.kernel / 2;
  FeaturePyramid<T> pyramid;
  Var<T> x = image;
  for (std::size_t s = 0; s < kScales; ++s) {
    for (std::size_t j = 0; j < per_block; ++j) {
      const auto& [w, b] = encoder.convs[s * per_block + j];
      x = relu(conv2d(x, w, b, 1, padding));
    }
    x = maxpool2(x);
    pyramid.features[s] = x;
  }
  return pyramid;
}

template <typename T>
Var<T> fr_branch(const EncoderView<T>& encoder, const Var<T>& query, const Var<T>& reference) {
  if (query.shape() != reference.shape()) {
    throw ShapeError("fr_branch: query " + query.shape().str() + " and reference " + reference.shape().str() +
                     " differ");
  }
  const auto fq = encoder_forward(encoder, query);
  const auto fr = encoder_forward(encoder, reference);
  std::vector<Var<T>> parts;
  parts.reserve(kScales);
  for (std::size_t s = 0; s < kScales; ++s) {
    parts.push_back(global_avg_pool(abs_diff(fq.features[s], fr.features[s])));
  }
  return concat(parts);
}

template <typename T>
Var<T> nr_branch(const EncoderView<T>& encoder, const Var<T>& query) {
  const auto fq = encoder_forward(encoder, query);
  std::vector<Var<T>> parts;
  parts.reserve(kScales);
  for (std::size_t s = 0; s < kScales; ++s) parts.push_back(global_avg_pool(fq.features[s]));
  return concat(parts);
}

template <typename T>
Var<T> fuse_and_score(const BranchFeatures<T>& features, const HeadView<T>& head) {
  std::vector<Var<T>> parts;
  for (const auto* f : {&features.d_frp, &features.d_frnp, &features.f_nr}) {
    if (f->has_value()) parts.push_back(**f);
  }
  if (parts.empty()) throw ModelError("fuse_and_score: no branch features present");
  Var<T> x = parts.size() == 1 ? parts.front() : concat(parts);
  if (x.shape().c != head.input_dim) {
    throw ShapeError("fuse_and_score: feature dim " + std::to_string(x.shape().c) + " does not match head input " +
                     std::to_string(head.input_dim));
  }
  x = relu(linear(x, head.layers[0].first, head.layers[0].second));
  x = relu(linear(x, head.layers[1].first, head.layers[1].second));
  return linear(x, head.layers[2].first, head.layers[2].second);
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::string conv_name(Branch b, std::size_t scale, std::size_t conv, const char* field) {
  return std::string(branch_name(b)) + ".s" + std::to_string(scale + 1) + ".conv" + std::to_string(conv + 1) + "." + field;
}

std::string head_name(std::size_t layer, const char* field) {
  return "head.fc" + std::to_string(layer + 1) + "." + field;
}

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;  // 0 for biases
  Branch owner;
  bool in_head;
};

// Declaration order of every parameter a config implies.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config) {
  std::vector<ParamSpec> specs;
  auto add_encoder = [&](Branch b, const EncoderConfig& enc) {
    std::size_t c_in = 3;
    const auto k = static_cast<std::size_t>(enc.kernel);
    for (std::size_t s = 0; s < kScales; ++s) {
      const auto c_out = static_cast<std::size_t>(enc.channels[s]);
      for (std::size_t j = 0; j < static_cast<std::size_t>(enc.convs_per_block); ++j) {
        specs.push_back({conv_name(b, s, j, "weight"), {c_out, c_in, k, k}, c_in * k * k, b, false});
        specs.push_back({conv_name(b, s, j, "bias"), {1, c_out, 1, 1}, 0, b, false});
        c_in = c_out;
      }
    }
  };
  if (config.use_frp) add_encoder(Branch::frp, config.frp_encoder);
  if (config.use_frnp) add_encoder(Branch::frnp, config.frnp_encoder);
  if (config.use_nr) add_encoder(Branch::nr, config.nr_encoder);
  const std::array<std::size_t, 4> dims{config.head_input_dim(), static_cast<std::size_t>(config.fc_dims[0]),
                                        static_cast<std::size_t>(config.fc_dims[1]), 1};
  for (std::size_t l = 0; l < 3; ++l) {
    specs.push_back({head_name(l, "weight"), {dims[l + 1], dims[l], 1, 1}, dims[l], Branch::frp, true});
    specs.push_back({head_name(l, "bias"), {1, dims[l + 1], 1, 1}, 0, Branch::frp, true});
  }
  return specs;
}

bool is_frozen(const ParamSpec& spec) { return !spec.in_head && spec.owner == Branch::frp; }

template <typename T>
void fill_he(BasicTensor<T>& t, std::size_t fan_in, std::mt19937_64& rng) {
  if (fan_in == 0) return;  // biases start at zero
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data) v = static_cast<T>(normal(rng));
}

const NamedTensor* find_named(const std::vector<NamedTensor>& weights, const std::string& name) {
  for (const auto& w : weights) {
    if (w.name == name) return &w;
  }
  return nullptr;
}

template <typename T>
BasicTensor<T> take_named(const std::vector<NamedTensor>& weights, const ParamSpec& spec, const std::string& source) {
  const NamedTensor* found = find_named(weights, spec.name);
  if (found == nullptr) throw ModelError("weights " + source + ": missing tensor '" + spec.name + "'");
  if (found->tensor.shape != spec.shape) {
    throw ModelError("weights " + source + ": tensor '" + spec.name + "' has shape " + found->tensor.shape.str() +
                     ", expected " + spec.shape.str());
  }
  return found->tensor.template cast<T>();
}

}  // namespace

template <typename T>
BasicIqaModel<T>::BasicIqaModel(ModelConfig config, std::vector<BasicParameter<T>> params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) throw ModelError("model: parameter count does not match config");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name() != layout[i].name || params_[i].value().shape != layout[i].shape) {
      throw ModelError("model: parameter '" + params_[i].name() + "' does not match config layout");
    }
    if (!index_.emplace(params_[i].name(), i).second) throw ModelError("model: duplicate parameter name");
  }
}

template <typename T>
BasicIqaModel<T> BasicIqaModel<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<NamedTensor> frp_file;
  const auto* frp_path = std::get_if<fs::path>(&config.frp_weights);
  if (config.use_frp && frp_path != nullptr) frp_file = load_weights(*frp_path);
  const std::uint64_t frp_seed = std::holds_alternative<FrpSeed>(config.frp_weights)
                                     ? std::get<FrpSeed>(config.frp_weights).value
                                     : 0;

  std::mt19937_64 trainable_rng(seed);
  std::mt19937_64 frozen_rng(frp_seed);
  std::vector<BasicParameter<T>> params;
  for (const auto& spec : parameter_layout(config)) {
    const bool frozen = is_frozen(spec);
    BasicTensor<T> value(spec.shape);
    if (frozen && frp_path != nullptr) {
      value = take_named<T>(frp_file, spec, "'" + frp_path->string() + "'");
    } else {
      fill_he(value, spec.fan_in, frozen ? frozen_rng : trainable_rng);
    }
    params.emplace_back(spec.name, std::move(value), !frozen);
  }
  return BasicIqaModel(config, std::move(params));
}

template <typename T>
BasicIqaModel<T> BasicIqaModel<T>::from_weights(const ModelConfig& config, const std::vector<NamedTensor>& weights) {
  config.validate();
  const auto layout = parameter_layout(config);
  if (weights.size() != layout.size()) {
    throw ModelError("checkpoint holds " + std::to_string(weights.size()) + " tensors, config expects " +
                     std::to_string(layout.size()));
  }
  std::vector<BasicParameter<T>> params;
  for (const auto& spec : layout) {
    params.emplace_back(spec.name, take_named<T>(weights, spec, "checkpoint"), !is_frozen(spec));
  }
  return BasicIqaModel(config, std::move(params));
}

template <typename T>
BasicParameter<T>* BasicIqaModel<T>::find(std::string_view name) {
  const auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
const BasicParameter<T>* BasicIqaModel<T>::find(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
std::optional<EncoderView<T>> BasicIqaModel<T>::encoder(Branch branch) const {
  const bool enabled = branch == Branch::frp ? config_.use_frp : branch == Branch::frnp ? config_.use_frnp : config_.use_nr;
  if (!enabled) return std::nullopt;
  const EncoderConfig& cfg = branch == Branch::frp    ? config_.frp_encoder
                             : branch == Branch::frnp ? config_.frnp_encoder
                                                      : config_.nr_encoder;
  EncoderView<T> view{cfg, {}};
  for (std::size_t s = 0; s < kScales; ++s) {
    for (std::size_t j = 0; j < static_cast<std::size_t>(cfg.convs_per_block); ++j) {
      view.convs.emplace_back(find(conv_name(branch, s, j, "weight"))->var(),
                              find(conv_name(branch, s, j, "bias"))->var());
    }
  }
  return view;
}

template <typename T>
HeadView<T> BasicIqaModel<T>::head() const {
  HeadView<T> view;
  view.input_dim = config_.head_input_dim();
  for (std::size_t l = 0; l < 3; ++l) {
    view.layers[l] = {find(head_name(l, "weight"))->var(), find(head_name(l, "bias"))->var()};
  }
  return view;
}

template <typename T>
BranchFeatures<T> BasicIqaModel<T>::extract(const Var<T>& query, const Var<T>& reference) const {
  BranchFeatures<T> out;
  if (auto enc = encoder(Branch::frp)) out.d_frp = fr_branch(*enc, query, reference);
  if (auto enc = encoder(Branch::frnp)) out.d_frnp = fr_branch(*enc, query, reference);
  if (auto enc = encoder(Branch::nr)) out.f_nr = nr_branch(*enc, query);
  return out;
}

template <typename T>
Var<T> BasicIqaModel<T>::forward(const Var<T>& query, const Var<T>& reference) const {
  return fuse_and_score(extract(query, reference), head());
}

template <typename T>
std::vector<NamedTensor> BasicIqaModel<T>::named_tensors() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name(), p.value().template cast<float>()});
  return out;
}

template class BasicIqaModel<float>;
template class BasicIqaModel<double>;

#define TRIQA_INSTANTIATE_BRANCHES(T)                                                         \
  template FeaturePyramid<T> encoder_forward(const EncoderView<T>&, const Var<T>&);          \
  template Var<T> fr_branch(const EncoderView<T>&, const Var<T>&, const Var<T>&);            \
  template Var<T> nr_branch(const EncoderView<T>&, const Var<T>&);                           \
  template Var<T> fuse_and_score(const BranchFeatures<T>&, const HeadView<T>&);

TRIQA_INSTANTIATE_BRANCHES(float)
TRIQA_INSTANTIATE_BRANCHES(double)

#undef TRIQA_INSTANTIATE_BRANCHES

// ---------------------------------------------------------------------------
// Checkpoints

fs::path sidecar_path(const fs::path& weights_path) {
  fs::path p = weights_path;
  p += ".json";
  return p;
}

void save_checkpoint(const fs::path& path, const IqaModel& model, std::array<int, 2> image_size) {
  save_weights(path, model.named_tensors());
  nlohmann::json sidecar;
  sidecar["format_version"] = kWeightsFormatVersion;
  sidecar["model"] = model_config_to_json(model.config());
  sidecar["image_size"] = image_size;
  std::ofstream os(sidecar_path(path), std::ios::trunc);
  if (!os) throw ModelError("cannot write checkpoint sidecar '" + sidecar_path(path).string() + "'");
  os << sidecar.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(sidecar_path(path));
  if (!is) throw ModelError("cannot read checkpoint sidecar '" + sidecar_path(path).string() + "'");
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& ex) {
    throw ModelError("checkpoint sidecar is not valid JSON: " + std::string(ex.what()));
  }
  if (!sidecar.is_object() || !sidecar.contains("model")) throw ModelError("checkpoint sidecar lacks 'model'");
  const ModelConfig config = model_config_from_json(sidecar.at("model"), "/model");
  std::array<int, 2> image_size{192, 192};
  if (sidecar.contains("image_size")) image_size = sidecar.at("image_size").get<std::array<int, 2>>();
  return {IqaModel::from_weights(config, load_weights(path)), image_size};
}

namespace {

std::string hash_parameters(const IqaModel& model, bool frozen_only) {
  Sha256 h;
  for (const auto& p : model.parameters()) {
    if (frozen_only && p.trainable()) continue;
    h.update(p.name());
    const Shape s = p.value().shape;
    const std::uint64_t dims[4] = {s.n, s.c, s.h, s.w};
    h.update(dims, sizeof(dims));
    h.update(p.value().data.data(), p.value().data.size() * sizeof(float));
  }
  return h.hex_digest();
}

}  // namespace

std::string frozen_parameter_hash(const IqaModel& model) { return hash_parameters(model, true); }
std::string parameter_hash(const IqaModel& model) { return hash_parameters(model, false); }

}  // namespace triqa
