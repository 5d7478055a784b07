#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "triqa/autograd.hpp"
#include "triqa/weights_io.hpp"

namespace triqa {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kScales = 4;
/// Input height and width must be multiples of this (four 2x poolings).
inline constexpr std::size_t kSpatialMultiple = 16;

/// Per-scale block: (conv k x k -> ReLU) x convs_per_block, then 2x2 max pool.
/// The scale-s tap is taken after the pool.
struct EncoderConfig {
  std::array<int, kScales> channels{16, 32, 64, 128};
  int convs_per_block = 2;
  int kernel = 3;

  std::size_t output_dim() const;
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct FrpSeed {
  std::uint64_t value = 0x5eed'f2b0ULL;
  friend bool operator==(const FrpSeed&, const FrpSeed&) = default;
};

/// Where the frozen full-reference encoder gets its weights.
using FrpWeightsSource = std::variant<FrpSeed, std::filesystem::path>;

struct ModelConfig {
  bool use_frp = true;
  bool use_frnp = true;
  bool use_nr = true;
  EncoderConfig frp_encoder;
  EncoderConfig frnp_encoder;
  EncoderConfig nr_encoder;
  std::array<int, 2> fc_dims{256, 64};
  FrpWeightsSource frp_weights = FrpSeed{};

  std::size_t head_input_dim() const;
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Branch { frp, frnp, nr };
std::string_view branch_name(Branch b);

/// Named leaf tensor. Copies are deep: a copied parameter owns a fresh leaf
/// node with the same value and no gradient.
template <typename T>
class BasicParameter {
 public:
  BasicParameter(std::string name, BasicTensor<T> value, bool trainable)
      : name_(std::move(name)), trainable_(trainable), var_(Var<T>::leaf(std::move(value), trainable)) {}
  BasicParameter(const BasicParameter& other)
      : name_(other.name_), trainable_(other.trainable_), var_(Var<T>::leaf(other.value(), other.trainable_)) {}
  BasicParameter& operator=(const BasicParameter& other) {
    if (this != &other) *this = BasicParameter(other);
    return *this;
  }
  BasicParameter(BasicParameter&&) noexcept = default;
  BasicParameter& operator=(BasicParameter&&) noexcept = default;

  const std::string& name() const { return name_; }
  bool trainable() const { return trainable_; }
  const Var<T>& var() const { return var_; }
  Var<T>& var() { return var_; }
  const BasicTensor<T>& value() const { return var_.value(); }
  BasicTensor<T>& mutable_value() { return var_.mutable_value(); }
  /// Accumulated gradient; empty for frozen parameters or before any backward pass.
  std::span<const T> grad() const { return var_.grad(); }
  void zero_grad() { var_.zero_grad(); }

 private:
  std::string name_;
  bool trainable_;
  Var<T> var_;
};

template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, kScales> features;
};

/// Pooled branch outputs, each (n, dim, 1, 1). Absent fields belong to
/// disabled branches.
template <typename T>
struct BranchFeatures {
  std::optional<Var<T>> d_frp;
  std::optional<Var<T>> d_frnp;
  std::optional<Var<T>> f_nr;
};

template <typename T>
struct EncoderView {
  EncoderConfig config;
  /// (weight, bias) per conv, scale-major.
  std::vector<std::pair<Var<T>, Var<T>>> convs;
};

template <typename T>
struct HeadView {
  std::size_t input_dim = 0;
  std::array<std::pair<Var<T>, Var<T>>, 3> layers;
};

template <typename T>
FeaturePyramid<T> encoder_forward(const EncoderView<T>& encoder, const Var<T>& image);

/// d = GAP|phi_1(q) - phi_1(r)| (+) ... (+) GAP|phi_4(q) - phi_4(r)|.
template <typename T>
Var<T> fr_branch(const EncoderView<T>& encoder, const Var<T>& query, const Var<T>& reference);

/// f = GAP phi_1(q) (+) ... (+) GAP phi_4(q).
template <typename T>
Var<T> nr_branch(const EncoderView<T>& encoder, const Var<T>& query);

/// Concatenates present features in (frp, frnp, nr) order and applies
/// linear -> ReLU -> linear -> ReLU -> linear. Returns (n, 1, 1, 1).
template <typename T>
Var<T> fuse_and_score(const BranchFeatures<T>& features, const HeadView<T>& head);

template <typename T>
class BasicIqaModel {
 public:
  /// He fan-in init for trainable parameters from `seed`; FRP weights from the
  /// configured source, frozen either way.
  static BasicIqaModel init(const ModelConfig& config, std::uint64_t seed);
  /// Rebuilds a model whose every parameter is taken from `weights` by name.
  static BasicIqaModel from_weights(const ModelConfig& config, const std::vector<NamedTensor>& weights);

  const ModelConfig& config() const { return config_; }
  std::vector<BasicParameter<T>>& parameters() { return params_; }
  const std::vector<BasicParameter<T>>& parameters() const { return params_; }
  BasicParameter<T>* find(std::string_view name);
  const BasicParameter<T>* find(std::string_view name) const;

  std::optional<EncoderView<T>> encoder(Branch branch) const;
  HeadView<T> head() const;

  BranchFeatures<T> extract(const Var<T>& query, const Var<T>& reference) const;
  Var<T> forward(const Var<T>& query, const Var<T>& reference) const;

  /// Parameter values in declaration order, converted to f32.
  std::vector<NamedTensor> named_tensors() const;

  template <typename U>
  BasicIqaModel<U> cast() const {
    std::vector<BasicParameter<U>> params;
    params.reserve(params_.size());
    for (const auto& p : params_) params.emplace_back(p.name(), p.value().template cast<U>(), p.trainable());
    return BasicIqaModel<U>(config_, std::move(params));
  }

  BasicIqaModel(ModelConfig config, std::vector<BasicParameter<T>> params);

 private:
  ModelConfig config_;
  std::vector<BasicParameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Parameter = BasicParameter<float>;
using IqaModel = BasicIqaModel<float>;

inline IqaModel init_model(const ModelConfig& config, std::uint64_t seed) { return IqaModel::init(config, seed); }

template <typename T>
Var<T> model_forward(const BasicIqaModel<T>& model, const Var<T>& query, const Var<T>& reference) {
  return model.forward(query, reference);
}

/// Checkpoint = weights container at `path` plus a JSON sidecar at
/// `path + ".json"` holding the model config and the training input size.
struct Checkpoint {
  IqaModel model;
  std::array<int, 2> image_size{192, 192};
};

std::filesystem::path sidecar_path(const std::filesystem::path& weights_path);
void save_checkpoint(const std::filesystem::path& path, const IqaModel& model, std::array<int, 2> image_size);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// SHA-256 hex digest over the names, shapes and bytes of the frozen parameters.
std::string frozen_parameter_hash(const IqaModel& model);
/// SHA-256 hex digest over every parameter.
std::string parameter_hash(const IqaModel& model);

}  // namespace triqa
