#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace tdcd {

// Samples are rows; row-major storage keeps per-sample dot products contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Half-open column range [begin, begin + width) owned by one silo.
struct ColumnRange {
  Index begin = 0;
  Index width = 0;

  Index end() const { return begin + width; }
  friend bool operator==(const ColumnRange&, const ColumnRange&) = default;
};

}  // namespace tdcd
