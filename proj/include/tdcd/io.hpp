#pragma once

// On-disk formats: per-round metrics CSV, little-endian model binary and its
// JSON sidecar.

#include "tdcd/data.hpp"
#include "tdcd/error.hpp"
#include "tdcd/loss.hpp"
#include "tdcd/protocol.hpp"
#include "tdcd/types.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>

namespace tdcd {

inline constexpr const char* kMetricsHeader =
    "round,iteration,loss,grad_norm,bytes_c2h,bytes_h2c,bytes_h2h,elapsed_ms";

/// Shortest decimal text that reads back to the same double.
inline std::string format_real(double v) {
  std::array<char, 32> buf{};
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf.data(), buf.size(), "%.*g", precision, v);
    if (std::strtod(buf.data(), nullptr) == v) break;
  }
  return buf.data();
}

inline void write_metrics_csv(std::ostream& out, const RunMetrics& metrics) {
  out << kMetricsHeader << '\n';
  for (const auto& r : metrics.rounds) {
    std::array<char, 32> ms{};
    std::snprintf(ms.data(), ms.size(), "%.3f", r.elapsed_ms);
    out << r.round << ',' << r.iteration << ',' << format_real(r.loss) << ',' << format_real(r.grad_norm)
        << ',' << r.bytes.client_to_hub << ',' << r.bytes.hub_to_client << ',' << r.bytes.hub_to_hub << ','
        << ms.data() << '\n';
  }
}

inline void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  write_metrics_csv(out, metrics);
}

/// D consecutive IEEE-754 binary64 values, little-endian, no header.
inline void write_model(const std::filesystem::path& path, const Vector& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  for (Index i = 0; i < model.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(model(i));
    std::array<char, 8> bytes{};
    for (auto& b : bytes) {
      b = static_cast<char>(bits & 0xFFu);
      bits >>= 8;
    }
    out.write(bytes.data(), bytes.size());
  }
}

inline Vector read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<double> values;
  std::array<unsigned char, 8> bytes{};
  while (in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[static_cast<std::size_t>(i)];
    values.push_back(std::bit_cast<double>(bits));
  }
  if (in.gcount() != 0) throw Error(ErrorKind::ParseError, path.string() + " is not a whole number of reals");
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

inline const char* to_string(Sampling s) { return s == Sampling::Stratified ? "stratified" : "global_uniform"; }
inline const char* to_string(LossFamily f) { return f == LossFamily::Ridge ? "ridge" : "logistic"; }
inline const char* to_string(InitKind i) { return i == InitKind::Zero ? "zero" : "seeded_random"; }

inline nlohmann::json model_sidecar(const TdcdConfig& cfg, const LossSpec& spec, const PartitionPlan& plan,
                                    InitKind init, double final_loss) {
  nlohmann::json j;
  j["format"] = "f64le";
  j["dimension"] = plan.n_cols;
  j["config"] = {{"N", cfg.n_silos},         {"K", cfg.clients},
                 {"Q", cfg.local_steps},     {"B", cfg.batch_size},
                 {"eta", cfg.eta},           {"rounds", cfg.rounds},
                 {"sampling", to_string(cfg.sampling)},
                 {"float_width", cfg.float_width},
                 {"init", to_string(init)}};
  j["loss"] = {{"family", to_string(spec.family)}, {"lambda", spec.lambda}};
  j["widths"] = plan.widths();
  j["seed"] = cfg.seed;
  j["final_loss"] = final_loss;
  return j;
}

}  // namespace tdcd
