#include "triqa/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <string_view>

#include "triqa/hash.hpp"

namespace triqa {

using json = nlohmann::json;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid config:";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

// Walks a JSON document, recording every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> problems;

  void fail(const std::string& pointer, const std::string& message) {
    problems.push_back((pointer.empty() ? "/" : pointer) + ": " + message);
  }

  bool object(const json& j, const std::string& pointer, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) {
      fail(pointer, "expected an object");
      return false;
    }
    for (const auto& [key, value] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(pointer + "/" + key, "unknown key");
    }
    return true;
  }

  template <typename F>
  void field(const json& obj, const std::string& pointer, const char* key, F&& read) {
    if (obj.contains(key)) read(obj.at(key), pointer + "/" + key);
  }

  void boolean(const json& j, const std::string& pointer, bool& out) {
    if (!j.is_boolean()) return fail(pointer, "expected a boolean");
    out = j.get<bool>();
  }

  void integer(const json& j, const std::string& pointer, int& out, int min) {
    if (!j.is_number_integer()) return fail(pointer, "expected an integer");
    const auto v = j.get<std::int64_t>();
    if (v < min || v > std::numeric_limits<int>::max()) {
      return fail(pointer, "must be an integer >= " + std::to_string(min));
    }
    out = static_cast<int>(v);
  }

  void unsigned64(const json& j, const std::string& pointer, std::uint64_t& out) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
      return fail(pointer, "expected a non-negative integer");
    }
    out = j.get<std::uint64_t>();
  }

  void real(const json& j, const std::string& pointer, double& out) {
    if (!j.is_number()) return fail(pointer, "expected a number");
    out = j.get<double>();
    if (!std::isfinite(out)) fail(pointer, "must be finite");
  }

  void string(const json& j, const std::string& pointer, std::string& out) {
    if (!j.is_string()) return fail(pointer, "expected a string");
    out = j.get<std::string>();
  }

  template <std::size_t N>
  void int_array(const json& j, const std::string& pointer, std::array<int, N>& out, int min) {
    if (!j.is_array() || j.size() != N) return fail(pointer, "expected an array of " + std::to_string(N) + " integers");
    for (std::size_t i = 0; i < N; ++i) integer(j[i], pointer + "/" + std::to_string(i), out[i], min);
  }
};

void read_encoder(Reader& r, const json& j, const std::string& pointer, EncoderConfig& out) {
  if (!r.object(j, pointer, {"channels", "convs_per_block", "kernel"})) return;
  r.field(j, pointer, "channels", [&](const json& v, const std::string& p) { r.int_array(v, p, out.channels, 1); });
  r.field(j, pointer, "convs_per_block",
          [&](const json& v, const std::string& p) { r.integer(v, p, out.convs_per_block, 1); });
  r.field(j, pointer, "kernel", [&](const json& v, const std::string& p) {
    r.integer(v, p, out.kernel, 1);
    if (out.kernel % 2 == 0) r.fail(p, "must be odd");
  });
}

void read_model(Reader& r, const json& j, const std::string& pointer, ModelConfig& out) {
  if (!r.object(j, pointer, {"use_frp", "use_frnp", "use_nr", "frp_encoder", "frnp_encoder", "nr_encoder",
                             "fc_dims", "frp_weights"})) {
    return;
  }
  r.field(j, pointer, "use_frp", [&](const json& v, const std::string& p) { r.boolean(v, p, out.use_frp); });
  r.field(j, pointer, "use_frnp", [&](const json& v, const std::string& p) { r.boolean(v, p, out.use_frnp); });
  r.field(j, pointer, "use_nr", [&](const json& v, const std::string& p) { r.boolean(v, p, out.use_nr); });
  r.field(j, pointer, "frp_encoder", [&](const json& v, const std::string& p) { read_encoder(r, v, p, out.frp_encoder); });
  r.field(j, pointer, "frnp_encoder", [&](const json& v, const std::string& p) { read_encoder(r, v, p, out.frnp_encoder); });
  r.field(j, pointer, "nr_encoder", [&](const json& v, const std::string& p) { read_encoder(r, v, p, out.nr_encoder); });
  r.field(j, pointer, "fc_dims", [&](const json& v, const std::string& p) { r.int_array(v, p, out.fc_dims, 1); });
  r.field(j, pointer, "frp_weights", [&](const json& v, const std::string& p) {
    if (!r.object(v, p, {"seed", "path"})) return;
    if (v.contains("seed") == v.contains("path")) return r.fail(p, "exactly one of 'seed' or 'path' is required");
    if (v.contains("seed")) {
      FrpSeed seed;
      r.unsigned64(v.at("seed"), p + "/seed", seed.value);
      out.frp_weights = seed;
    } else {
      std::string path;
      r.string(v.at("path"), p + "/path", path);
      if (path.empty()) r.fail(p + "/path", "must not be empty");
      out.frp_weights = std::filesystem::path(path);
    }
  });
  if (!out.use_frp && !out.use_frnp && !out.use_nr) r.fail(pointer, "at least one branch must be enabled");
}

void read_image_size(Reader& r, const json& j, const std::string& pointer, std::array<int, 2>& out) {
  r.int_array(j, pointer, out, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    if (out[i] % static_cast<int>(kSpatialMultiple) != 0) {
      r.fail(pointer + "/" + std::to_string(i), "must be divisible by 16");
    }
  }
}

void read_train(Reader& r, const json& j, const std::string& pointer, TrainConfig& out) {
  if (!r.object(j, pointer, {"lr_init", "lr_final", "batch_size", "epochs", "seed", "augment", "eval_every"})) return;
  r.field(j, pointer, "lr_init", [&](const json& v, const std::string& p) { r.real(v, p, out.lr_init); });
  r.field(j, pointer, "lr_final", [&](const json& v, const std::string& p) { r.real(v, p, out.lr_final); });
  r.field(j, pointer, "batch_size", [&](const json& v, const std::string& p) { r.integer(v, p, out.batch_size, 1); });
  r.field(j, pointer, "epochs", [&](const json& v, const std::string& p) { r.integer(v, p, out.epochs, 1); });
  r.field(j, pointer, "seed", [&](const json& v, const std::string& p) { r.unsigned64(v, p, out.seed); });
  r.field(j, pointer, "augment", [&](const json& v, const std::string& p) { r.boolean(v, p, out.augment); });
  r.field(j, pointer, "eval_every", [&](const json& v, const std::string& p) { r.integer(v, p, out.eval_every, 1); });
  if (!(out.lr_init > 0.0)) r.fail(pointer + "/lr_init", "must be positive");
  if (!(out.lr_final > 0.0)) r.fail(pointer + "/lr_final", "must be positive");
  if (out.lr_final > out.lr_init) r.fail(pointer + "/lr_final", "must not exceed lr_init");
}

void read_data(Reader& r, const json& j, const std::string& pointer, DataConfig& out) {
  if (!r.object(j, pointer, {"manifest", "split", "image_size"})) return;
  r.field(j, pointer, "manifest", [&](const json& v, const std::string& p) { r.string(v, p, out.manifest); });
  if (out.manifest.empty()) r.fail(pointer + "/manifest", "required");
  r.field(j, pointer, "split", [&](const json& v, const std::string& p) {
    if (!r.object(v, p, {"train_fraction", "seed", "group_by_reference"})) return;
    r.field(v, p, "train_fraction", [&](const json& x, const std::string& q) {
      r.real(x, q, out.split.train_fraction);
      if (!(out.split.train_fraction > 0.0 && out.split.train_fraction < 1.0)) r.fail(q, "must lie in (0, 1)");
    });
    r.field(v, p, "seed", [&](const json& x, const std::string& q) { r.unsigned64(x, q, out.split.seed); });
    r.field(v, p, "group_by_reference",
            [&](const json& x, const std::string& q) { r.boolean(x, q, out.split.group_by_reference); });
  });
  r.field(j, pointer, "image_size", [&](const json& v, const std::string& p) { read_image_size(r, v, p, out.image_size); });
}

json encoder_to_json(const EncoderConfig& e) {
  return {{"channels", e.channels}, {"convs_per_block", e.convs_per_block}, {"kernel", e.kernel}};
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(join_problems(problems)), problems_(std::move(problems)) {}

json model_config_to_json(const ModelConfig& c) {
  json frp_weights;
  if (const auto* seed = std::get_if<FrpSeed>(&c.frp_weights)) {
    frp_weights["seed"] = seed->value;
  } else {
    frp_weights["path"] = std::get<std::filesystem::path>(c.frp_weights).string();
  }
  return {{"use_frp", c.use_frp},
          {"use_frnp", c.use_frnp},
          {"use_nr", c.use_nr},
          {"frp_encoder", encoder_to_json(c.frp_encoder)},
          {"frnp_encoder", encoder_to_json(c.frnp_encoder)},
          {"nr_encoder", encoder_to_json(c.nr_encoder)},
          {"fc_dims", c.fc_dims},
          {"frp_weights", frp_weights}};
}

ModelConfig model_config_from_json(const json& j, const std::string& pointer) {
  Reader r;
  ModelConfig out;
  read_model(r, j, pointer, out);
  if (!r.problems.empty()) throw ConfigError(std::move(r.problems));
  return out;
}

json to_json(const ExperimentConfig& c) {
  return {{"model", model_config_to_json(c.model)},
          {"train",
           {{"lr_init", c.train.lr_init},
            {"lr_final", c.train.lr_final},
            {"batch_size", c.train.batch_size},
            {"epochs", c.train.epochs},
            {"seed", c.train.seed},
            {"augment", c.train.augment},
            {"eval_every", c.train.eval_every}}},
          {"data",
           {{"manifest", c.data.manifest},
            {"split",
             {{"train_fraction", c.data.split.train_fraction},
              {"seed", c.data.split.seed},
              {"group_by_reference", c.data.split.group_by_reference}}},
            {"image_size", c.data.image_size}}},
          {"output_dir", c.output_dir}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  Reader r;
  ExperimentConfig out;
  if (r.object(j, "", {"model", "train", "data", "output_dir"})) {
    r.field(j, "", "model", [&](const json& v, const std::string& p) { read_model(r, v, p, out.model); });
    r.field(j, "", "train", [&](const json& v, const std::string& p) { read_train(r, v, p, out.train); });
    if (j.contains("data")) {
      read_data(r, j.at("data"), "/data", out.data);
    } else {
      r.fail("/data", "required");
    }
    r.field(j, "", "output_dir", [&](const json& v, const std::string& p) {
      r.string(v, p, out.output_dir);
      if (out.output_dir.empty()) r.fail(p, "must not be empty");
    });
  }
  if (!r.problems.empty()) throw ConfigError(std::move(r.problems));
  out.train.image_size = out.data.image_size;
  return out;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"/: cannot read config file '" + path.string() + "'"});
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& ex) {
    throw ConfigError({std::string("/: not valid JSON: ") + ex.what()});
  }
  return experiment_config_from_json(j);
}

void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write config '" + path.string() + "'");
  os << to_json(config).dump(2) << '\n';
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(to_json(config).dump()); }

}  // namespace triqa
