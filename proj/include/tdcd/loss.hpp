#pragma once

// Partially separable losses f(sum_j X_(j) theta_(j); y) + lambda/2 ||theta||^2
// with per-sample scalar link (r = 1), block partial gradients evaluated from
// intermediate values, Lipschitz estimates and the local-step feasibility
// condition 1 - eta L - eta^2 Lmax^2 Q^2 >= 0.

#include "tdcd/data.hpp"
#include "tdcd/error.hpp"
#include "tdcd/types.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace tdcd {

enum class LossFamily { Ridge, Logistic };

struct LossSpec {
  LossFamily family = LossFamily::Ridge;
  double lambda = 1.0;
  Index link_dim = 1;
  // Global column indices excluded from the penalty (empty: penalize all).
  std::vector<Index> unpenalized;

  double penalty_weight(Index column) const {
    return std::find(unpenalized.begin(), unpenalized.end(), column) == unpenalized.end() ? 1.0 : 0.0;
  }
};

inline void validate(const LossSpec& spec) {
  if (!std::isfinite(spec.lambda) || spec.lambda < 0.0) {
    throw Error(ErrorKind::InvalidConfig, "lambda must be finite and >= 0");
  }
  if (spec.link_dim != 1) throw Error(ErrorKind::InvalidConfig, "only scalar links (r = 1) are supported");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

/// d f / d z for one sample with prediction z and label y.
inline double link_derivative(LossFamily family, double z, double y) {
  return family == LossFamily::Ridge ? z - y : sigmoid(z) - y;
}

inline double sample_loss(LossFamily family, double z, double y) {
  if (family == LossFamily::Ridge) {
    const double r = z - y;
    return 0.5 * r * r;
  }
  return softplus(z) - y * z;
}

inline void check_labels(const LossSpec& spec, const Eigen::Ref<const Vector>& labels) {
  if (spec.family != LossFamily::Logistic) return;
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) != 0.0 && labels(i) != 1.0) {
      throw Error(ErrorKind::LabelDomain,
                  "logistic labels must be 0 or 1, got " + std::to_string(labels(i)),
                  static_cast<std::size_t>(i));
    }
  }
}

/// Per-sample partial predictions X_(j)^(p) . theta_(j).
inline Vector predict_partial(const Eigen::Ref<const Matrix>& features_block,
                              const Eigen::Ref<const Vector>& theta_block) {
  if (features_block.cols() != theta_block.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                "block has " + std::to_string(features_block.cols()) + " columns but theta has " +
                    std::to_string(theta_block.size()) + " entries");
  }
  Vector out(features_block.rows());
  for (Index p = 0; p < features_block.rows(); ++p) {
    double z = 0.0;
    for (Index c = 0; c < theta_block.size(); ++c) z += features_block(p, c) * theta_block(c);
    out(p) = z;
  }
  return out;
}

inline double penalty(const LossSpec& spec, const Eigen::Ref<const Vector>& theta) {
  double sq = 0.0;
  for (Index c = 0; c < theta.size(); ++c) sq += spec.penalty_weight(c) * theta(c) * theta(c);
  return 0.5 * spec.lambda * sq;
}

inline double full_loss(const LossSpec& spec, const Dataset& ds, const Eigen::Ref<const Vector>& theta) {
  if (theta.size() != ds.cols()) throw Error(ErrorKind::DimensionMismatch, "theta length != D");
  const Vector z = predict_partial(ds.features, theta);
  double sum = 0.0;
  for (Index p = 0; p < ds.rows(); ++p) sum += sample_loss(spec.family, z(p), ds.labels(p));
  return sum / static_cast<double>(ds.rows()) + penalty(spec, theta);
}

inline Vector full_gradient(const LossSpec& spec, const Dataset& ds, const Eigen::Ref<const Vector>& theta) {
  if (theta.size() != ds.cols()) throw Error(ErrorKind::DimensionMismatch, "theta length != D");
  Vector grad = Vector::Zero(ds.cols());
  for (Index p = 0; p < ds.rows(); ++p) {
    double z = 0.0;
    for (Index c = 0; c < ds.cols(); ++c) z += ds.features(p, c) * theta(c);
    const double d = link_derivative(spec.family, z, ds.labels(p));
    for (Index c = 0; c < ds.cols(); ++c) grad(c) += d * ds.features(p, c);
  }
  grad /= static_cast<double>(ds.rows());
  for (Index c = 0; c < ds.cols(); ++c) grad(c) += spec.lambda * spec.penalty_weight(c) * theta(c);
  return grad;
}

namespace detail {

// (1/b) sum_p x_p f'(phi_other_p + x_p . theta, y_p) + lambda theta; samples
// are visited in the order given.
template <typename RowAt, typename LabelAt>
Vector block_gradient(const LossSpec& spec, Index count, RowAt row_at, LabelAt label_at,
                      const Eigen::Ref<const Vector>& theta_block,
                      const Eigen::Ref<const Vector>& phi_other, Index first_column) {
  const Index width = theta_block.size();
  Vector grad = Vector::Zero(width);
  for (Index p = 0; p < count; ++p) {
    const double* x = row_at(p);
    double z = phi_other(p);
    for (Index c = 0; c < width; ++c) z += x[c] * theta_block(c);
    const double d = link_derivative(spec.family, z, label_at(p));
    for (Index c = 0; c < width; ++c) grad(c) += d * x[c];
  }
  if (count > 0) grad /= static_cast<double>(count);
  for (Index c = 0; c < width; ++c) {
    grad(c) += spec.lambda * spec.penalty_weight(first_column + c) * theta_block(c);
  }
  return grad;
}

}  // namespace detail

/// Client partial gradient for one block. `phi_other` holds the summed
/// other-block predictions for exactly these rows in the same order;
/// `first_column` locates the block in the global model (for the penalty mask).
/// An empty batch yields the penalty term alone.
inline Vector partial_gradient(const LossSpec& spec, const Eigen::Ref<const Matrix>& features_rows,
                               const Eigen::Ref<const Vector>& labels_rows,
                               const Eigen::Ref<const Vector>& theta_block,
                               const Eigen::Ref<const Vector>& phi_other, Index first_column = 0) {
  if (features_rows.cols() != theta_block.size() || labels_rows.size() != features_rows.rows() ||
      phi_other.size() != features_rows.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "partial_gradient operand shapes disagree");
  }
  check_labels(spec, labels_rows);
  // Copy into contiguous row-major storage so row pointers are valid.
  const Matrix rows = features_rows;
  return detail::block_gradient(
      spec, rows.rows(), [&](Index p) { return rows.row(p).data(); },
      [&](Index p) { return labels_rows(p); }, theta_block, phi_other, first_column);
}

/// Same computation addressing the rows `sample_ids` of `block` in `ds`
/// without copying them.
inline Vector partial_gradient(const LossSpec& spec, const Dataset& ds,
                               std::span<const std::size_t> sample_ids, ColumnRange block,
                               const Eigen::Ref<const Vector>& theta_block,
                               const Eigen::Ref<const Vector>& phi_other) {
  if (theta_block.size() != block.width || phi_other.size() != static_cast<Index>(sample_ids.size())) {
    throw Error(ErrorKind::DimensionMismatch, "partial_gradient operand shapes disagree");
  }
  return detail::block_gradient(
      spec, static_cast<Index>(sample_ids.size()),
      [&](Index p) { return ds.features.row(static_cast<Index>(sample_ids[p])).data() + block.begin; },
      [&](Index p) { return ds.labels(static_cast<Index>(sample_ids[p])); }, theta_block, phi_other,
      block.begin);
}

// ---------------------------------------------------------------------------
// Lipschitz constants and step size

struct LipschitzMethod {
  enum class Kind { Exact, PowerIteration } kind = Kind::Exact;
  int iters = 1000;
  double tol = 1e-10;

  static LipschitzMethod exact() { return {}; }
  static LipschitzMethod power_iteration(int iters = 1000, double tol = 1e-10) {
    return {Kind::PowerIteration, iters, tol};
  }
};

struct LipschitzInfo {
  double L = 0.0;
  std::vector<double> L_blocks;
  double L_max = 0.0;
  LipschitzMethod method;
};

namespace detail {

// Largest eigenvalue of A^T A for the given columns of A.
inline double top_gram_eigenvalue(const Matrix& a, const LipschitzMethod& method) {
  const Index d = a.cols();
  if (method.kind == LipschitzMethod::Kind::Exact) {
    if (d > 512) throw Error(ErrorKind::InvalidConfig, "exact eigensolve limited to D <= 512");
    const Eigen::MatrixXd gram = a.transpose() * a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
    return std::max(solver.eigenvalues()(d - 1), 0.0);
  }
  Rng rng(0x7464636450495445ULL);
  Vector v(d);
  for (Index c = 0; c < d; ++c) v(c) = rng.normal();
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < method.iters; ++it) {
    const Vector w = a.transpose() * (a * v);
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    v = w / next;
    if (std::abs(next - estimate) < method.tol * next) return next;
    estimate = next;
  }
  throw Error(ErrorKind::NotConverged,
              "power iteration did not converge in " + std::to_string(method.iters) + " iterations",
              static_cast<std::size_t>(method.iters));
}

}  // namespace detail

/// Global constant L = lambda_max(X^T X)/M * c + lambda and block bounds
/// L_j = ||X_(j)|| ||X|| / M * c + lambda, where c = 1 (ridge) or 1/4
/// (logistic). Power-iteration estimates of the data term are inflated by 1%.
inline LipschitzInfo estimate_lipschitz(const LossSpec& spec, const Dataset& ds,
                                        const PartitionPlan& plan,
                                        LipschitzMethod method = LipschitzMethod::exact()) {
  if (plan.n_rows != ds.rows() || plan.n_cols != ds.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "partition plan does not match dataset shape");
  }
  const double curvature = spec.family == LossFamily::Ridge ? 1.0 : 0.25;
  const double inflate = method.kind == LipschitzMethod::Kind::PowerIteration ? 1.01 : 1.0;
  const double m = static_cast<double>(ds.rows());
  // Norms are inflated by sqrt(1.01) so products of two norms carry 1%.
  const double norm_x = std::sqrt(detail::top_gram_eigenvalue(ds.features, method) * inflate);

  LipschitzInfo info;
  info.method = method;
  info.L = curvature * norm_x * norm_x / m + spec.lambda;
  for (const auto& block : plan.vertical_blocks) {
    const Matrix xj = ds.features.middleCols(block.begin, block.width);
    const double norm_j = std::sqrt(detail::top_gram_eigenvalue(xj, method) * inflate);
    info.L_blocks.push_back(curvature * norm_j * norm_x / m + spec.lambda);
  }
  info.L_max = *std::max_element(info.L_blocks.begin(), info.L_blocks.end());
  return info;
}

/// 1 - eta L - eta^2 Lmax^2 Q^2; non-negative values admit the step size.
inline double step_condition(const LipschitzInfo& info, double eta, int q) {
  const double lq = info.L_max * static_cast<double>(q);
  return 1.0 - eta * info.L - eta * eta * lq * lq;
}

/// Positive root of step_condition, in the cancellation-free form
/// 2 / (L + sqrt(L^2 + 4 Lmax^2 Q^2)).
inline double max_step_size(const LipschitzInfo& info, int q) {
  const double lq = info.L_max * static_cast<double>(q);
  return 2.0 / (info.L + std::sqrt(info.L * info.L + 4.0 * lq * lq));
}

}  // namespace tdcd
