#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tdcd {

enum class ErrorKind {
  MissingFile,
  ParseError,
  EmptyDataset,
  ZeroVariance,
  BadWidths,
  TooManyClients,
  DimensionMismatch,
  LabelDomain,
  NotConverged,
  ScheduleMismatch,
  InvalidConfig,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::BadWidths: return "BadWidths";
    case ErrorKind::TooManyClients: return "TooManyClients";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::LabelDomain: return "LabelDomain";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::ScheduleMismatch: return "ScheduleMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Library-wide exception. `row`/`column` carry the location for ParseError,
/// `column` the offending index for ZeroVariance, `row` the iteration count
/// for NotConverged.
class Error : public std::runtime_error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Error(ErrorKind kind, const std::string& what, std::size_t row = npos,
        std::size_t column = npos)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        row_(row),
        column_(column) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  ErrorKind kind_;
  std::size_t row_;
  std::size_t column_;
};

}  // namespace tdcd
