#pragma once

// Reference optimizers used by the test suite and `tdcd verify`. Nothing in
// the round engine depends on this header.

#include "tdcd/data.hpp"
#include "tdcd/loss.hpp"
#include "tdcd/rng.hpp"
#include "tdcd/types.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace tdcd::oracle {

struct OracleTrace {
  std::vector<Vector> iterates;  // iterates[0] is the initial point
  std::vector<double> losses;
  std::vector<std::vector<std::size_t>> rng_log;  // sampled indices per step, draw order
};

/// theta <- theta - eta * full_gradient(theta), `steps` times.
inline OracleTrace centralized_gd(const LossSpec& spec, const Dataset& ds, double eta, std::size_t steps,
                                  const Vector& init) {
  OracleTrace trace;
  Vector theta = init;
  trace.iterates.push_back(theta);
  trace.losses.push_back(full_loss(spec, ds, theta));
  for (std::size_t s = 0; s < steps; ++s) {
    theta -= eta * full_gradient(spec, ds, theta);
    trace.iterates.push_back(theta);
    trace.losses.push_back(full_loss(spec, ds, theta));
  }
  return trace;
}

/// Minibatch SGD. Step s draws B distinct rows from round_stream(seed, s) by
/// partial Fisher-Yates over 0..M-1, the same stream the engine consumes for
/// N = 1, K = 1, Q = 1. The batch gradient is the full-batch gradient of the
/// selected rows taken in ascending order, so B = M reproduces centralized_gd.
inline OracleTrace centralized_sgd(const LossSpec& spec, const Dataset& ds, double eta, std::size_t steps,
                                   std::size_t batch_size, std::uint64_t seed, const Vector& init) {
  std::vector<std::size_t> all(static_cast<std::size_t>(ds.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  OracleTrace trace;
  Vector theta = init;
  trace.iterates.push_back(theta);
  trace.losses.push_back(full_loss(spec, ds, theta));
  for (std::size_t s = 0; s < steps; ++s) {
    Rng rng = round_stream(seed, s);
    auto batch = draw_without_replacement(rng, all, batch_size);
    trace.rng_log.push_back(batch);
    std::sort(batch.begin(), batch.end());
    Dataset sub;
    sub.features.resize(static_cast<Index>(batch.size()), ds.cols());
    sub.labels.resize(static_cast<Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      sub.features.row(static_cast<Index>(i)) = ds.features.row(static_cast<Index>(batch[i]));
      sub.labels(static_cast<Index>(i)) = ds.labels(static_cast<Index>(batch[i]));
    }
    theta -= eta * full_gradient(spec, sub, theta);
    trace.iterates.push_back(theta);
    trace.losses.push_back(full_loss(spec, ds, theta));
  }
  return trace;
}

/// Synchronous parallel block gradient descent: every block takes one exact
/// partial-gradient step from the common previous iterate.
inline OracleTrace parallel_block_gd(const LossSpec& spec, const Dataset& ds,
                                     const std::vector<ColumnRange>& blocks, double eta, std::size_t steps,
                                     const Vector& init) {
  const double m = static_cast<double>(ds.rows());
  OracleTrace trace;
  Vector theta = init;
  trace.iterates.push_back(theta);
  trace.losses.push_back(full_loss(spec, ds, theta));
  for (std::size_t s = 0; s < steps; ++s) {
    const Vector z = ds.features * theta;
    Vector d(z.size());
    for (Index p = 0; p < z.size(); ++p) d(p) = link_derivative(spec.family, z(p), ds.labels(p));
    Vector next = theta;
    for (const auto& block : blocks) {
      Vector g = ds.features.middleCols(block.begin, block.width).transpose() * d / m;
      for (Index c = 0; c < block.width; ++c) {
        g(c) += spec.lambda * spec.penalty_weight(block.begin + c) * theta(block.begin + c);
      }
      next.segment(block.begin, block.width) -= eta * g;
    }
    theta = next;
    trace.iterates.push_back(theta);
    trace.losses.push_back(full_loss(spec, ds, theta));
  }
  return trace;
}

/// Central differences of full_loss, one coordinate at a time.
inline Vector finite_diff_gradient(const LossSpec& spec, const Dataset& ds, const Vector& theta,
                                   double h = 1e-6) {
  Vector grad(theta.size());
  Vector probe = theta;
  for (Index c = 0; c < theta.size(); ++c) {
    probe(c) = theta(c) + h;
    const double up = full_loss(spec, ds, probe);
    probe(c) = theta(c) - h;
    const double down = full_loss(spec, ds, probe);
    probe(c) = theta(c);
    grad(c) = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace tdcd::oracle
