#pragma once

// JSON-configured experiment sweeps: dataset preparation, one engine run per
// sweep variant, metrics/model files, a combined loss plot and a summary of
// rounds needed to reach a loss threshold.

#include "tdcd/data.hpp"
#include "tdcd/error.hpp"
#include "tdcd/io.hpp"
#include "tdcd/loss.hpp"
#include "tdcd/parallel.hpp"
#include "tdcd/protocol.hpp"
#include "tdcd/svg.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace tdcd {

using nlohmann::json;

struct DatasetSource {
  // CSV source when csv_path is set, otherwise synthetic regression.
  std::optional<std::filesystem::path> csv_path;
  LabelColumn label_column = std::string("critical_temp");
  bool has_header = true;
  std::optional<Index> max_rows;     // applied right after loading
  std::optional<Index> subset_rows;  // applied after standardization and bias
  std::uint64_t synth_seed = 7;
  Index synth_rows = 2000;
  Index synth_features = 81;
  double synth_noise = 0.5;
};

struct Variant {
  std::string name;   // directory name, e.g. "Q4"
  std::string label;  // legend text, e.g. "Q=4"
  TdcdConfig cfg;
  LossSpec spec;
  std::optional<std::vector<Index>> widths;
};

struct ExperimentConfig {
  DatasetSource dataset;
  bool standardize = true;
  bool bias = true;
  bool penalize_bias = true;
  LossSpec loss;
  TdcdConfig training;
  std::optional<std::vector<Index>> vertical_widths;
  RowScheme row_scheme = RowScheme::Contiguous;
  std::optional<std::uint64_t> row_seed;
  InitKind init = InitKind::Zero;
  json sweep = json::array();
  std::optional<double> threshold;
  double threshold_factor = 1.05;
  bool log_y = true;
  bool record_time = false;
  std::filesystem::path output_dir = "tdcd-out";
};

/// Named defaults reproducing the ridge sweeps over Q, N and K.
inline json preset(const std::string& name) {
  json base = {
      {"dataset", {{"label_column", "critical_temp"}, {"has_header", true}, {"max_rows", 20000}}},
      {"standardize", true},
      {"bias", true},
      {"loss", {{"family", "ridge"}, {"lambda", 1.0}, {"penalize_bias", true}}},
      {"training",
       {{"Q", 1}, {"B", 100}, {"eta", 0.001}, {"rounds", 300}, {"sampling", "stratified"}, {"seed", 0},
        {"init", "zero"}, {"float_width", 64}}},
      {"summary", {{"threshold_factor", 1.05}}},
      {"plot", {{"log_y", true}}},
  };
  if (name == "fig2a") {
    base["topology"] = {{"N", 4}, {"K", 5}};
    base["sweep"] = json::array({{{"Q", 1}}, {{"Q", 2}}, {{"Q", 4}}, {{"Q", 8}}});
  } else if (name == "fig2b") {
    base["dataset"]["subset_rows"] = 2000;
    base["topology"] = {{"N", 4}, {"K", 2}};
    base["training"]["Q"] = 4;
    base["training"]["B"] = 20;
    base["training"]["rounds"] = 200;
    base["sweep"] = json::array({{{"N", 1}}, {{"N", 2}}, {{"N", 4}}, {{"N", 8}}});
  } else if (name == "fig2c") {
    base["dataset"]["subset_rows"] = 2000;
    base["topology"] = {{"N", 4}, {"K", 5}};
    base["training"]["Q"] = 4;
    base["training"]["B"] = 500;
    base["training"]["rounds"] = 100;
    base["sweep"] = json::array({{{"K", 2}}, {{"K", 5}}, {{"K", 10}}});
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown preset '" + name + "' (fig2a, fig2b, fig2c)");
  }
  return base;
}

namespace detail {

inline Sampling parse_sampling(const std::string& s) {
  if (s == "stratified") return Sampling::Stratified;
  if (s == "global_uniform") return Sampling::GlobalUniform;
  throw Error(ErrorKind::InvalidConfig, "sampling must be stratified or global_uniform");
}

inline LossFamily parse_family(const std::string& s) {
  if (s == "ridge") return LossFamily::Ridge;
  if (s == "logistic") return LossFamily::Logistic;
  throw Error(ErrorKind::InvalidConfig, "loss family must be ridge or logistic");
}

inline InitKind parse_init(const std::string& s) {
  if (s == "zero") return InitKind::Zero;
  if (s == "seeded_random") return InitKind::SeededRandom;
  throw Error(ErrorKind::InvalidConfig, "init must be zero or seeded_random");
}

template <typename T>
void read_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key) && !obj.at(key).is_null()) out = obj.at(key).get<T>();
}

}  // namespace detail

/// Parses a config document. A "preset" key supplies defaults that the rest
/// of the document overrides (JSON merge patch).
inline ExperimentConfig parse_config(json doc) {
  try {
    if (doc.contains("preset")) {
      json merged = preset(doc.at("preset").get<std::string>());
      doc.erase("preset");
      merged.merge_patch(doc);
      doc = std::move(merged);
    }
    ExperimentConfig cfg;
    const json empty = json::object();
    const json& data = doc.contains("dataset") ? doc.at("dataset") : empty;
    if (data.contains("csv")) cfg.dataset.csv_path = data.at("csv").get<std::string>();
    if (data.contains("label_column")) {
      const auto& lc = data.at("label_column");
      if (lc.is_number_integer()) {
        cfg.dataset.label_column = lc.get<std::size_t>();
      } else {
        cfg.dataset.label_column = lc.get<std::string>();
      }
    }
    detail::read_if(data, "has_header", cfg.dataset.has_header);
    if (data.contains("max_rows") && !data.at("max_rows").is_null()) {
      cfg.dataset.max_rows = data.at("max_rows").get<Index>();
    }
    if (data.contains("subset_rows") && !data.at("subset_rows").is_null()) {
      cfg.dataset.subset_rows = data.at("subset_rows").get<Index>();
    }
    if (!cfg.dataset.csv_path && cfg.dataset.max_rows) cfg.dataset.synth_rows = *cfg.dataset.max_rows;
    if (data.contains("synthetic")) {
      const auto& s = data.at("synthetic");
      detail::read_if(s, "seed", cfg.dataset.synth_seed);
      detail::read_if(s, "rows", cfg.dataset.synth_rows);
      detail::read_if(s, "features", cfg.dataset.synth_features);
      detail::read_if(s, "noise_std", cfg.dataset.synth_noise);
    }
    detail::read_if(doc, "standardize", cfg.standardize);
    detail::read_if(doc, "bias", cfg.bias);

    if (doc.contains("loss")) {
      const auto& l = doc.at("loss");
      if (l.contains("family")) cfg.loss.family = detail::parse_family(l.at("family").get<std::string>());
      detail::read_if(l, "lambda", cfg.loss.lambda);
      detail::read_if(l, "penalize_bias", cfg.penalize_bias);
    }
    if (doc.contains("topology")) {
      const auto& t = doc.at("topology");
      detail::read_if(t, "N", cfg.training.n_silos);
      detail::read_if(t, "K", cfg.training.clients);
      if (t.contains("vertical_widths") && !t.at("vertical_widths").is_null()) {
        cfg.vertical_widths = t.at("vertical_widths").get<std::vector<Index>>();
      }
      if (t.contains("row_scheme")) {
        const auto s = t.at("row_scheme").get<std::string>();
        if (s == "contiguous") {
          cfg.row_scheme = RowScheme::Contiguous;
        } else if (s == "strided") {
          cfg.row_scheme = RowScheme::Strided;
        } else {
          throw Error(ErrorKind::InvalidConfig, "row_scheme must be contiguous or strided");
        }
      }
      if (t.contains("row_seed") && !t.at("row_seed").is_null()) {
        cfg.row_seed = t.at("row_seed").get<std::uint64_t>();
      }
    }
    if (doc.contains("training")) {
      const auto& t = doc.at("training");
      detail::read_if(t, "Q", cfg.training.local_steps);
      detail::read_if(t, "B", cfg.training.batch_size);
      detail::read_if(t, "eta", cfg.training.eta);
      detail::read_if(t, "rounds", cfg.training.rounds);
      detail::read_if(t, "seed", cfg.training.seed);
      detail::read_if(t, "float_width", cfg.training.float_width);
      if (t.contains("sampling")) cfg.training.sampling = detail::parse_sampling(t.at("sampling").get<std::string>());
      if (t.contains("init")) cfg.init = detail::parse_init(t.at("init").get<std::string>());
    }
    if (doc.contains("sweep") && !doc.at("sweep").is_null()) {
      cfg.sweep = doc.at("sweep");
      if (!cfg.sweep.is_array()) throw Error(ErrorKind::InvalidConfig, "sweep must be a list of override objects");
    }
    if (doc.contains("summary")) {
      const auto& s = doc.at("summary");
      if (s.contains("threshold") && !s.at("threshold").is_null()) cfg.threshold = s.at("threshold").get<double>();
      detail::read_if(s, "threshold_factor", cfg.threshold_factor);
    }
    if (doc.contains("plot")) detail::read_if(doc.at("plot"), "log_y", cfg.log_y);
    detail::read_if(doc, "record_time", cfg.record_time);
    if (doc.contains("output_dir")) cfg.output_dir = doc.at("output_dir").get<std::string>();
    return cfg;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
  return parse_config(std::move(doc));
}

/// load -> first max_rows -> standardize -> append bias -> first subset_rows.
inline Dataset prepare_dataset(const ExperimentConfig& cfg) {
  Dataset ds;
  if (cfg.dataset.csv_path) {
    ds = load_csv(*cfg.dataset.csv_path, cfg.dataset.label_column, cfg.dataset.has_header);
  } else {
    ds = synth_regression(cfg.dataset.synth_seed, cfg.dataset.synth_rows, cfg.dataset.synth_features,
                          cfg.dataset.synth_noise)
             .first;
  }
  if (cfg.dataset.max_rows) ds = take_rows(ds, *cfg.dataset.max_rows);
  if (cfg.standardize) ds = standardize(ds);
  if (cfg.bias) ds = append_bias(ds);
  if (cfg.dataset.subset_rows) ds = take_rows(ds, *cfg.dataset.subset_rows);
  return ds;
}

/// Expands the sweep into validated variants. Variant i runs with seed + i.
inline std::vector<Variant> expand_variants(const ExperimentConfig& cfg, const Dataset& ds) {
  LossSpec spec = cfg.loss;
  if (cfg.bias && !cfg.penalize_bias) spec.unpenalized.push_back(ds.cols() - 1);

  json overrides = cfg.sweep.empty() ? json::array({json::object()}) : cfg.sweep;
  std::vector<Variant> variants;
  std::set<std::string> names;
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    const json& o = overrides[i];
    if (!o.is_object()) throw Error(ErrorKind::InvalidConfig, "sweep entries must be objects");
    Variant v;
    v.cfg = cfg.training;
    v.spec = spec;
    v.widths = cfg.vertical_widths;
    std::string name, label;
    for (const auto& [key, value] : o.items()) {
      if (key == "Q") {
        v.cfg.local_steps = value.get<std::size_t>();
      } else if (key == "B") {
        v.cfg.batch_size = value.get<std::size_t>();
      } else if (key == "N") {
        v.cfg.n_silos = value.get<std::size_t>();
        if (!o.contains("vertical_widths")) v.widths.reset();
      } else if (key == "K") {
        v.cfg.clients = value.get<std::size_t>();
      } else if (key == "eta") {
        v.cfg.eta = value.get<double>();
      } else if (key == "rounds") {
        v.cfg.rounds = value.get<std::size_t>();
      } else if (key == "sampling") {
        v.cfg.sampling = detail::parse_sampling(value.get<std::string>());
      } else if (key == "lambda") {
        v.spec.lambda = value.get<double>();
      } else if (key == "vertical_widths") {
        v.widths = value.get<std::vector<Index>>();
        continue;
      } else {
        throw Error(ErrorKind::InvalidConfig, "unsupported sweep key '" + key + "'");
      }
      const std::string text = value.is_string() ? value.get<std::string>() : value.dump();
      name += (name.empty() ? "" : "_") + key + text;
      label += (label.empty() ? "" : ", ") + key + "=" + text;
    }
    v.name = name.empty() ? "run" : name;
    v.label = label.empty() ? "run" : label;
    if (!names.insert(v.name).second) v.name += "_" + std::to_string(i);
    v.cfg.seed = cfg.training.seed + i;

    try {
      validate(v.spec);
      const auto plan = make_partition(ds.rows(), ds.cols(), v.cfg.n_silos, v.cfg.clients, v.widths,
                                       cfg.row_scheme, cfg.row_seed);
      validate(v.cfg, ds, plan);
      check_labels(v.spec, ds.labels);
    } catch (const Error& e) {
      throw Error(e.kind(), "variant " + v.name + ": " + e.what());
    }
    variants.push_back(std::move(v));
  }
  return variants;
}

/// First round whose loss is at or below `threshold`.
inline std::optional<std::size_t> rounds_to_threshold(const RunMetrics& m, double threshold) {
  for (const auto& r : m.rounds) {
    if (r.loss <= threshold) return r.round;
  }
  return std::nullopt;
}

struct VariantOutcome {
  bool ok = false;
  std::string error;
  RunResult result;
};

/// Runs every variant (in parallel up to `threads`), writes all outputs and
/// returns the process exit status. Diagnostics go to `log`.
inline int run_experiment(const ExperimentConfig& cfg, std::size_t threads, std::ostream& log = std::cerr) {
  Dataset ds;
  std::vector<Variant> variants;
  try {
    ds = prepare_dataset(cfg);
    variants = expand_variants(cfg, ds);
  } catch (const std::exception& e) {
    log << "tdcd: " << e.what() << '\n';
    return 1;
  }

  std::filesystem::create_directories(cfg.output_dir);
  std::vector<VariantOutcome> outcomes(variants.size());
  const std::size_t outer = std::min(std::max<std::size_t>(threads, 1), variants.size());
  const std::size_t inner = std::max<std::size_t>(1, std::max<std::size_t>(threads, 1) / outer);
  std::mutex log_mutex;

  parallel_for(variants.size(), outer, [&](std::size_t i) {
    auto& v = variants[i];
    auto& out = outcomes[i];
    try {
      TdcdConfig run_cfg = v.cfg;
      run_cfg.threads = inner;
      const auto plan = make_partition(ds.rows(), ds.cols(), run_cfg.n_silos, run_cfg.clients, v.widths,
                                       cfg.row_scheme, cfg.row_seed);
      out.result = run_tdcd(run_cfg, ds, plan, v.spec, {cfg.init, cfg.record_time});
      const auto dir = cfg.output_dir / v.name;
      std::filesystem::create_directories(dir);
      write_metrics_csv(dir / "metrics.csv", out.result.metrics);
      write_model(dir / "model.bin", out.result.model);
      std::ofstream sidecar(dir / "model.json");
      sidecar << model_sidecar(run_cfg, v.spec, plan, cfg.init, out.result.metrics.rounds.back().loss).dump(2)
              << '\n';
      out.ok = true;
    } catch (const std::exception& e) {
      out.error = e.what();
      std::lock_guard lock(log_mutex);
      log << "tdcd: variant " << v.name << " failed: " << e.what() << '\n';
    }
  });

  std::vector<Series> curves;
  double best_final = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    if (!outcomes[i].ok) continue;
    Series s{variants[i].label, {}, {}};
    for (const auto& r : outcomes[i].result.metrics.rounds) {
      s.x.push_back(static_cast<double>(r.round));
      s.y.push_back(r.loss);
    }
    best_final = std::min(best_final, outcomes[i].result.metrics.rounds.back().loss);
    curves.push_back(std::move(s));
  }
  PlotOptions plot;
  plot.log_y = cfg.log_y;
  std::ofstream(cfg.output_dir / "curves.svg") << render_svg(curves, plot);

  const double threshold = cfg.threshold ? *cfg.threshold : cfg.threshold_factor * best_final;
  json summary;
  summary["threshold"] = threshold;
  summary["threshold_rule"] = cfg.threshold ? "absolute" : "factor_of_best_final";
  summary["threshold_factor"] = cfg.threshold_factor;
  summary["variants"] = json::array();
  bool all_ok = true;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    json entry = {{"name", variants[i].name}, {"label", variants[i].label}, {"ok", outcomes[i].ok}};
    if (outcomes[i].ok) {
      const auto& m = outcomes[i].result.metrics;
      entry["final_loss"] = m.rounds.back().loss;
      const auto hit = rounds_to_threshold(m, threshold);
      entry["rounds_to_threshold"] = hit ? json(*hit) : json(nullptr);
    } else {
      entry["error"] = outcomes[i].error;
      all_ok = false;
    }
    summary["variants"].push_back(std::move(entry));
  }
  std::ofstream(cfg.output_dir / "summary.json") << summary.dump(2) << '\n';
  return all_ok ? 0 : 1;
}

}  // namespace tdcd
