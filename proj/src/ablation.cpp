#include "triqa/ablation.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "triqa/train.hpp"

namespace triqa {

using json = nlohmann::json;

std::string_view to_string(AblationAxis axis) { return axis == AblationAxis::branches ? "branches" : "backbones"; }

AblationAxis parse_ablation_axis(std::string_view text) {
  if (text == "branches") return AblationAxis::branches;
  if (text == "backbones") return AblationAxis::backbones;
  throw std::invalid_argument("unknown ablation axis '" + std::string(text) + "' (expected branches or backbones)");
}

std::array<int, kScales> backbone_channels(std::string_view preset) {
  if (preset == "small") return {8, 16, 32, 64};
  if (preset == "medium") return {16, 32, 64, 128};
  if (preset == "large") return {24, 48, 96, 192};
  throw std::invalid_argument("unknown backbone preset '" + std::string(preset) + "'");
}

std::vector<AblationVariant> ablation_variants(const ModelConfig& base, AblationAxis axis) {
  std::vector<AblationVariant> out;
  if (axis == AblationAxis::branches) {
    const std::array<std::pair<const char*, std::array<bool, 3>>, 3> rows{{
        {"frp", {true, false, false}},
        {"frp+frnp", {true, true, false}},
        {"frp+frnp+nr", {true, true, true}},
    }};
    for (const auto& [label, flags] : rows) {
      ModelConfig m = base;
      m.use_frp = flags[0];
      m.use_frnp = flags[1];
      m.use_nr = flags[2];
      out.push_back({label, m});
    }
  } else {
    for (const char* preset : {"small", "medium", "large"}) {
      ModelConfig m = base;
      const auto channels = backbone_channels(preset);
      m.frp_encoder.channels = channels;
      m.frnp_encoder.channels = channels;
      m.nr_encoder.channels = channels;
      out.push_back({preset, m});
    }
  }
  return out;
}

bool AblationRow::failed() const {
  for (const auto& r : runs) {
    if (!r.ok()) return true;
  }
  return false;
}

bool AblationReport::failed() const {
  for (const auto& r : rows) {
    if (r.failed()) return true;
  }
  return false;
}

namespace {

const EncoderConfig& representative_encoder(const ModelConfig& m) {
  if (m.use_frp) return m.frp_encoder;
  if (m.use_frnp) return m.frnp_encoder;
  return m.nr_encoder;
}

}  // namespace

AblationReport run_ablation(const ExperimentConfig& base, AblationAxis axis, const Dataset& train_set,
                            const Dataset& val_set, const AblationOptions& options) {
  if (options.seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  AblationReport report;
  report.axis = axis;
  report.seeds = options.seeds;
  report.train_size = train_set.size();
  report.val_size = val_set.size();

  for (const auto& variant : ablation_variants(base.model, axis)) {
    ExperimentConfig cfg = base;
    cfg.model = variant.model;
    AblationRow row;
    row.label = variant.label;
    row.use_frp = variant.model.use_frp;
    row.use_frnp = variant.model.use_frnp;
    row.use_nr = variant.model.use_nr;
    row.channels = representative_encoder(variant.model).channels;
    row.config_hash = config_hash(cfg);
    try {
      variant.model.validate();
      row.head_input_dim = variant.model.head_input_dim();
    } catch (const std::exception& e) {
      for (auto seed : options.seeds) row.runs.push_back({seed, std::nullopt, std::nullopt, 0, e.what()});
      report.rows.push_back(std::move(row));
      continue;
    }
    if (options.log) options.log(row.label + ": head input dim " + std::to_string(row.head_input_dim));

    double srcc_sum = 0.0, krcc_sum = 0.0;
    int with_metric = 0;
    for (auto seed : options.seeds) {
      AblationRun run;
      run.seed = seed;
      try {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        auto result = train(init_model(variant.model, seed), train_set, val_set, tc);
        const EvalResult eval = evaluate(result.model, val_set, tc.image_size);
        run.best_epoch = result.report.best_epoch;
        if (eval.degenerate) {
          run.error = "constant predictions on validation set";
        } else {
          run.srcc_abs = eval.srcc_abs;
          run.krcc_abs = eval.krcc_abs;
          srcc_sum += *eval.srcc_abs;
          krcc_sum += *eval.krcc_abs;
          ++with_metric;
        }
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      if (options.log) {
        std::ostringstream msg;
        msg << row.label << " seed " << seed << ": ";
        if (run.srcc_abs) {
          msg << "|srcc| " << *run.srcc_abs << " |krcc| " << *run.krcc_abs;
        } else {
          msg << "failed: " << run.error;
        }
        options.log(msg.str());
      }
      row.runs.push_back(std::move(run));
    }
    if (with_metric > 0) {
      row.mean_srcc_abs = srcc_sum / with_metric;
      row.mean_krcc_abs = krcc_sum / with_metric;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

std::string optional_text(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

}  // namespace

json to_json(const AblationReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json runs = json::array();
    for (const auto& r : row.runs) {
      runs.push_back({{"seed", r.seed},
                      {"srcc_abs", optional_json(r.srcc_abs)},
                      {"krcc_abs", optional_json(r.krcc_abs)},
                      {"best_epoch", r.best_epoch},
                      {"error", r.error}});
    }
    rows.push_back({{"label", row.label},
                    {"use_frp", row.use_frp},
                    {"use_frnp", row.use_frnp},
                    {"use_nr", row.use_nr},
                    {"channels", row.channels},
                    {"head_input_dim", row.head_input_dim},
                    {"config_hash", row.config_hash},
                    {"mean_srcc_abs", optional_json(row.mean_srcc_abs)},
                    {"mean_krcc_abs", optional_json(row.mean_krcc_abs)},
                    {"runs", runs}});
  }
  return {{"axis", to_string(report.axis)},
          {"seeds", report.seeds},
          {"train_size", report.train_size},
          {"val_size", report.val_size},
          {"rows", rows}};
}

AblationReport ablation_report_from_json(const json& j) {
  AblationReport report;
  report.axis = parse_ablation_axis(j.at("axis").get<std::string>());
  report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  report.train_size = j.at("train_size").get<std::size_t>();
  report.val_size = j.at("val_size").get<std::size_t>();
  for (const auto& jr : j.at("rows")) {
    AblationRow row;
    row.label = jr.at("label").get<std::string>();
    row.use_frp = jr.at("use_frp").get<bool>();
    row.use_frnp = jr.at("use_frnp").get<bool>();
    row.use_nr = jr.at("use_nr").get<bool>();
    row.channels = jr.at("channels").get<std::array<int, kScales>>();
    row.head_input_dim = jr.at("head_input_dim").get<std::size_t>();
    row.config_hash = jr.at("config_hash").get<std::string>();
    row.mean_srcc_abs = optional_from(jr.at("mean_srcc_abs"));
    row.mean_krcc_abs = optional_from(jr.at("mean_krcc_abs"));
    for (const auto& r : jr.at("runs")) {
      row.runs.push_back({r.at("seed").get<std::uint64_t>(), optional_from(r.at("srcc_abs")),
                          optional_from(r.at("krcc_abs")), r.at("best_epoch").get<int>(),
                          r.at("error").get<std::string>()});
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write ablation report '" + path.string() + "'");
  os << "label,use_frp,use_frnp,use_nr,channels,head_input_dim,seeds,srcc_abs,krcc_abs,srcc_abs_per_seed,"
        "krcc_abs_per_seed,status,config_hash\n";
  for (const auto& row : report.rows) {
    std::string channels, seeds, srcc_runs, krcc_runs, status = "ok";
    for (std::size_t s = 0; s < kScales; ++s) channels += (s ? ";" : "") + std::to_string(row.channels[s]);
    for (std::size_t i = 0; i < row.runs.size(); ++i) {
      const auto& r = row.runs[i];
      const char* sep = i ? ";" : "";
      seeds += sep + std::to_string(r.seed);
      srcc_runs += sep + optional_text(r.srcc_abs);
      krcc_runs += sep + optional_text(r.krcc_abs);
      if (!r.ok()) status = "failed: " + r.error;
    }
    os << csv_escape(row.label) << ',' << row.use_frp << ',' << row.use_frnp << ',' << row.use_nr << ',' << channels
       << ',' << row.head_input_dim << ',' << seeds << ',' << optional_text(row.mean_srcc_abs) << ','
       << optional_text(row.mean_krcc_abs) << ',' << srcc_runs << ',' << krcc_runs << ',' << csv_escape(status) << ','
       << row.config_hash << '\n';
  }
  if (!os) throw std::runtime_error("write failed for ablation report '" + path.string() + "'");
}

}  // namespace triqa
