#pragma once

// Dataset ingestion, standardization, synthetic generation and the two-level
// (vertical x horizontal) partition plan.

#include "tdcd/error.hpp"
#include "tdcd/rng.hpp"
#include "tdcd/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace tdcd {

struct Dataset {
  Matrix features;  // M x D
  Vector labels;    // M
  // Populated by standardize(); entries for exempt columns are 0 and 1.
  std::optional<Vector> column_means;
  std::optional<Vector> column_stds;
  // Columns standardize() leaves untouched (e.g. the bias column).
  std::vector<Index> exempt_columns;
  std::vector<std::string> column_names;

  Index rows() const { return features.rows(); }
  Index cols() const { return features.cols(); }
  bool standardized() const { return column_means.has_value(); }
  bool is_exempt(Index c) const {
    return std::find(exempt_columns.begin(), exempt_columns.end(), c) != exempt_columns.end();
  }
};

/// Label column chosen by header name or zero-based field index.
using LabelColumn = std::variant<std::string, std::size_t>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view field) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

}  // namespace detail

/// Reads a comma-separated file. Rows are kept in file order; ParseError
/// reports the zero-based physical line and field index.
inline Dataset load_csv(const std::filesystem::path& path, const LabelColumn& label_column,
                        bool has_header) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  if (has_header) {
    if (!std::getline(in, line)) throw Error(ErrorKind::EmptyDataset, path.string() + " is empty");
    for (auto f : detail::split_fields(line)) header.emplace_back(f);
    ++line_no;
  }

  std::size_t label_index = 0;
  if (const auto* name = std::get_if<std::string>(&label_column)) {
    const auto it = std::find(header.begin(), header.end(), *name);
    if (it == header.end()) {
      throw Error(ErrorKind::ParseError, "label column '" + *name + "' not found in header", 0);
    }
    label_index = static_cast<std::size_t>(it - header.begin());
  } else {
    label_index = std::get<std::size_t>(label_column);
  }

  std::vector<double> values;
  std::vector<double> labels;
  std::size_t n_fields = header.size();
  for (; std::getline(in, line); ++line_no) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (n_fields == 0) n_fields = fields.size();
    if (fields.size() != n_fields) {
      throw Error(ErrorKind::ParseError,
                  "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(n_fields),
                  line_no, std::min(fields.size(), n_fields));
    }
    if (label_index >= n_fields) {
      throw Error(ErrorKind::ParseError, "label index out of range", line_no, label_index);
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto v = detail::parse_real(fields[c]);
      if (!v) {
        throw Error(ErrorKind::ParseError,
                    "line " + std::to_string(line_no) + " field " + std::to_string(c) + ": '" +
                        std::string(fields[c]) + "' is not a finite real",
                    line_no, c);
      }
      if (c == label_index) {
        labels.push_back(*v);
      } else {
        values.push_back(*v);
      }
    }
  }
  if (labels.empty()) throw Error(ErrorKind::EmptyDataset, path.string() + " has no data rows");
  if (n_fields < 2) throw Error(ErrorKind::EmptyDataset, path.string() + " has no feature columns");

  const auto m = static_cast<Index>(labels.size());
  const auto d = static_cast<Index>(n_fields - 1);
  Dataset ds;
  ds.features = Eigen::Map<const Matrix>(values.data(), m, d);
  ds.labels = Eigen::Map<const Vector>(labels.data(), m);
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_index) ds.column_names.push_back(header[c]);
  }
  return ds;
}

/// Transforms every non-exempt column to (x - mean) / std using the
/// population standard deviation (divisor M). Columns already recorded as
/// exempt on `ds` stay exempt.
inline Dataset standardize(const Dataset& ds, const std::set<Index>& exempt = {}) {
  Dataset out = ds;
  const Index m = ds.rows();
  const Index d = ds.cols();
  for (Index c : exempt) {
    if (c >= 0 && c < d && !out.is_exempt(c)) out.exempt_columns.push_back(c);
  }
  std::sort(out.exempt_columns.begin(), out.exempt_columns.end());

  Vector means = Vector::Zero(d);
  Vector stds = Vector::Ones(d);
  for (Index c = 0; c < d; ++c) {
    if (out.is_exempt(c)) continue;
    double sum = 0.0;
    for (Index r = 0; r < m; ++r) sum += ds.features(r, c);
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (Index r = 0; r < m; ++r) {
      const double dev = ds.features(r, c) - mean;
      sq += dev * dev;
    }
    const double sd = std::sqrt(sq / static_cast<double>(m));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      throw Error(ErrorKind::ZeroVariance, "column " + std::to_string(c) + " is constant",
                  Error::npos, static_cast<std::size_t>(c));
    }
    means(c) = mean;
    stds(c) = sd;
    for (Index r = 0; r < m; ++r) out.features(r, c) = (ds.features(r, c) - mean) / sd;
  }
  out.column_means = std::move(means);
  out.column_stds = std::move(stds);
  return out;
}

/// Appends an all-ones last column and marks it exempt from standardization.
inline Dataset append_bias(const Dataset& ds) {
  Dataset out = ds;
  const Index d = ds.cols();
  out.features.conservativeResize(Eigen::NoChange, d + 1);
  out.features.col(d).setOnes();
  out.exempt_columns.push_back(d);
  if (!out.column_names.empty()) out.column_names.emplace_back("bias");
  if (out.column_means) {
    out.column_means->conservativeResize(d + 1);
    (*out.column_means)(d) = 0.0;
    out.column_stds->conservativeResize(d + 1);
    (*out.column_stds)(d) = 1.0;
  }
  return out;
}

/// First `count` rows (all rows when count >= M). Standardization state is kept.
inline Dataset take_rows(const Dataset& ds, Index count) {
  if (count >= ds.rows()) return ds;
  if (count < 1) throw Error(ErrorKind::EmptyDataset, "row subset must keep at least one row");
  Dataset out = ds;
  out.features = ds.features.topRows(count);
  out.labels = ds.labels.head(count);
  return out;
}

/// Features and true weights i.i.d. N(0, 1) from one seeded stream (features
/// row by row, then weights, then noise); labels = X w + noise_std * N(0, 1).
inline std::pair<Dataset, Vector> synth_regression(std::uint64_t seed, Index m, Index d,
                                                   double noise_std) {
  if (m < 1 || d < 1) throw Error(ErrorKind::EmptyDataset, "synthetic dataset needs M, D >= 1");
  Rng rng(seed);
  Dataset ds;
  ds.features.resize(m, d);
  for (Index r = 0; r < m; ++r) {
    for (Index c = 0; c < d; ++c) ds.features(r, c) = rng.normal();
  }
  Vector w(d);
  for (Index c = 0; c < d; ++c) w(c) = rng.normal();
  ds.labels.resize(m);
  for (Index r = 0; r < m; ++r) {
    double z = 0.0;
    for (Index c = 0; c < d; ++c) z += ds.features(r, c) * w(c);
    ds.labels(r) = noise_std == 0.0 ? z : z + noise_std * rng.normal();
  }
  return {std::move(ds), std::move(w)};
}

enum class RowScheme { Contiguous, Strided };

struct PartitionPlan {
  Index n_rows = 0;
  Index n_cols = 0;
  std::size_t n_silos = 0;
  std::size_t clients_per_silo = 0;
  std::vector<ColumnRange> vertical_blocks;
  // row_assignment[j][k]: ascending sample indices owned by client k of silo j.
  std::vector<std::vector<std::vector<std::size_t>>> row_assignment;
  // False when K does not divide M (shard sizes then differ by at most one).
  bool equal_split = true;
  bool identical_across_silos = true;

  std::vector<Index> widths() const {
    std::vector<Index> w;
    for (const auto& b : vertical_blocks) w.push_back(b.width);
    return w;
  }

  /// owner(j)[p] = client index holding sample p in silo j.
  std::vector<std::uint32_t> owner_table(std::size_t silo) const {
    std::vector<std::uint32_t> owner(static_cast<std::size_t>(n_rows), 0);
    for (std::size_t k = 0; k < clients_per_silo; ++k) {
      for (std::size_t p : row_assignment[silo][k]) owner[p] = static_cast<std::uint32_t>(k);
    }
    return owner;
  }
};

/// Near-equal widths: the first D mod N blocks are one column wider.
inline std::vector<Index> default_widths(Index d, std::size_t n) {
  std::vector<Index> widths(n, d / static_cast<Index>(n));
  for (std::size_t j = 0; j < static_cast<std::size_t>(d % static_cast<Index>(n)); ++j) ++widths[j];
  return widths;
}

inline PartitionPlan make_partition(Index m, Index d, std::size_t n_silos, std::size_t clients,
                                    const std::optional<std::vector<Index>>& vertical_widths = {},
                                    RowScheme scheme = RowScheme::Contiguous,
                                    std::optional<std::uint64_t> seed = {}) {
  if (n_silos == 0 || static_cast<Index>(n_silos) > d) {
    throw Error(ErrorKind::BadWidths, "need 1 <= N <= D (N=" + std::to_string(n_silos) +
                                          ", D=" + std::to_string(d) + ")");
  }
  if (clients == 0 || static_cast<Index>(clients) > m) {
    throw Error(ErrorKind::TooManyClients, "need 1 <= K <= M (K=" + std::to_string(clients) +
                                               ", M=" + std::to_string(m) + ")");
  }

  PartitionPlan plan;
  plan.n_rows = m;
  plan.n_cols = d;
  plan.n_silos = n_silos;
  plan.clients_per_silo = clients;

  const std::vector<Index> widths = vertical_widths ? *vertical_widths : default_widths(d, n_silos);
  if (widths.size() != n_silos) throw Error(ErrorKind::BadWidths, "expected one width per silo");
  Index begin = 0;
  for (Index w : widths) {
    if (w < 1) throw Error(ErrorKind::BadWidths, "every silo needs at least one column");
    plan.vertical_blocks.push_back({begin, w});
    begin += w;
  }
  if (begin != d) {
    throw Error(ErrorKind::BadWidths,
                "widths sum to " + std::to_string(begin) + ", expected " + std::to_string(d));
  }

  const auto rows = static_cast<std::size_t>(m);
  plan.equal_split = rows % clients == 0;
  auto split = [&](const std::vector<std::size_t>& order) {
    std::vector<std::vector<std::size_t>> shards(clients);
    const std::size_t base = rows / clients;
    const std::size_t extra = rows % clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
      const std::size_t size = base + (k < extra ? 1 : 0);
      shards[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + size));
      std::sort(shards[k].begin(), shards[k].end());
      pos += size;
    }
    return shards;
  };

  std::vector<std::size_t> identity(rows);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  if (scheme == RowScheme::Contiguous) {
    const auto shards = split(identity);
    plan.row_assignment.assign(n_silos, shards);
  } else if (!seed) {
    // Round robin: sample p goes to client p mod K in every silo.
    std::vector<std::vector<std::size_t>> shards(clients);
    for (std::size_t p = 0; p < rows; ++p) shards[p % clients].push_back(p);
    plan.row_assignment.assign(n_silos, shards);
  } else {
    plan.identical_across_silos = n_silos == 1;
    Rng rng(splitmix64(*seed));
    for (std::size_t j = 0; j < n_silos; ++j) {
      auto order = draw_without_replacement(rng, identity, rows);
      plan.row_assignment.push_back(split(order));
    }
  }
  return plan;
}

}  // namespace tdcd
