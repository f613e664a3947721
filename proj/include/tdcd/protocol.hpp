#pragma once

// Round engine for tiered decentralized coordinate descent.
//
// N silos each own a contiguous feature block; inside a silo, K clients hold
// horizontal shards of that block and a hub coordinates them. Every Q
// iterations the hubs average their clients' blocks, agree on Q minibatches,
// collect per-sample partial predictions from the clients, exchange them over
// a full mesh and hand every client the summed other-silo predictions for its
// own rows. Clients then take Q local gradient steps against those frozen
// values while updating their own block.

#include "tdcd/data.hpp"
#include "tdcd/error.hpp"
#include "tdcd/loss.hpp"
#include "tdcd/parallel.hpp"
#include "tdcd/rng.hpp"
#include "tdcd/types.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace tdcd {

enum class Sampling { Stratified, GlobalUniform };
enum class InitKind { Zero, SeededRandom };

struct TdcdConfig {
  std::size_t n_silos = 1;
  std::size_t clients = 1;
  std::size_t local_steps = 1;  // Q
  std::size_t batch_size = 1;   // B
  double eta = 0.001;
  std::size_t rounds = 1;
  Sampling sampling = Sampling::Stratified;
  std::uint64_t seed = 0;
  int float_width = 64;  // bits per transmitted real, for byte accounting only
  std::size_t threads = 1;
};

inline void validate(const TdcdConfig& cfg, const Dataset& ds, const PartitionPlan& plan) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (plan.n_rows != ds.rows() || plan.n_cols != ds.cols()) fail("partition plan does not match dataset");
  if (cfg.n_silos != plan.n_silos || cfg.clients != plan.clients_per_silo) {
    fail("N/K disagree with the partition plan");
  }
  if (cfg.local_steps < 1) fail("Q must be >= 1");
  if (cfg.rounds < 1) fail("rounds must be >= 1");
  if (!std::isfinite(cfg.eta) || cfg.eta < 0.0) fail("eta must be finite and >= 0");
  if (cfg.float_width != 32 && cfg.float_width != 64) fail("float_width must be 32 or 64");
  if (cfg.batch_size < 1 || static_cast<Index>(cfg.batch_size) > ds.rows()) fail("need 1 <= B <= M");
  if (cfg.sampling == Sampling::Stratified) {
    if (cfg.batch_size % cfg.clients != 0) fail("stratified sampling needs K | B");
    if (!plan.identical_across_silos) fail("stratified sampling needs identical row shards across silos");
    const std::size_t per_client = cfg.batch_size / cfg.clients;
    for (const auto& shard : plan.row_assignment[0]) {
      if (shard.size() < per_client) fail("B/K exceeds the smallest client shard");
    }
  }
}

/// The Q minibatches agreed for one communication round (global sample ids).
struct MinibatchSchedule {
  std::vector<std::vector<std::size_t>> batches;
};

/// Pure function of (seed, round). Stratified batches take B/K distinct rows
/// from each client of silo 0 in client order; global batches take B distinct
/// rows from all M. Batches of one round are drawn independently.
inline MinibatchSchedule sample_schedule(const TdcdConfig& cfg, const PartitionPlan& plan,
                                         std::uint64_t round) {
  Rng rng = round_stream(cfg.seed, round);
  MinibatchSchedule schedule;
  std::vector<std::size_t> all;
  if (cfg.sampling == Sampling::GlobalUniform) {
    all.resize(static_cast<std::size_t>(plan.n_rows));
    std::iota(all.begin(), all.end(), std::size_t{0});
  }
  for (std::size_t tau = 0; tau < cfg.local_steps; ++tau) {
    std::vector<std::size_t> batch;
    if (cfg.sampling == Sampling::Stratified) {
      const std::size_t per_client = cfg.batch_size / cfg.clients;
      for (const auto& shard : plan.row_assignment[0]) {
        const auto picked = draw_without_replacement(rng, shard, per_client);
        batch.insert(batch.end(), picked.begin(), picked.end());
      }
    } else {
      batch = draw_without_replacement(rng, all, cfg.batch_size);
    }
    schedule.batches.push_back(std::move(batch));
  }
  return schedule;
}

/// Partial predictions one client reports for its rows of one batch.
struct IntermediateBlock {
  std::size_t silo = 0;
  std::size_t client = 0;
  std::size_t batch_index = 0;
  std::vector<std::size_t> sample_ids;  // batch order restricted to the client's rows
  Vector values;
};

struct CommBytes {
  std::uint64_t client_to_hub = 0;
  std::uint64_t hub_to_client = 0;
  std::uint64_t hub_to_hub = 0;

  CommBytes& operator+=(const CommBytes& o) {
    client_to_hub += o.client_to_hub;
    hub_to_client += o.hub_to_client;
    hub_to_hub += o.hub_to_hub;
    return *this;
  }
  friend bool operator==(const CommBytes&, const CommBytes&) = default;
};

/// Closed-form bytes for one round. With w = float_width / 8 and r = 1:
///   client->hub = sum_j sum_k w (D_j + sum_tau b_kj^tau)   (model + uploads)
///   hub->client = sum_j sum_k w (D_j + sum_tau b_kj^tau)   (average + projection)
///   hub->hub    = N (N - 1) w Q B                          (full-mesh broadcast)
/// where b_kj^tau counts client (k, j)'s rows in batch tau. Sample-id headers
/// are not counted.
inline CommBytes comm_cost(const TdcdConfig& cfg, const PartitionPlan& plan,
                           const MinibatchSchedule& schedule) {
  const std::uint64_t w = static_cast<std::uint64_t>(cfg.float_width / 8);
  const std::uint64_t r = 1;
  CommBytes bytes;
  for (std::size_t j = 0; j < plan.n_silos; ++j) {
    const auto owner = plan.owner_table(j);
    std::vector<std::uint64_t> phi_count(plan.clients_per_silo, 0);
    for (const auto& batch : schedule.batches) {
      for (std::size_t id : batch) ++phi_count[owner[id]];
    }
    const auto width = static_cast<std::uint64_t>(plan.vertical_blocks[j].width);
    for (std::size_t k = 0; k < plan.clients_per_silo; ++k) {
      bytes.client_to_hub += w * (width + phi_count[k] * r);
      bytes.hub_to_client += w * (width + phi_count[k] * r);
    }
  }
  std::uint64_t entries = 0;
  for (const auto& batch : schedule.batches) entries += batch.size();
  const auto n = static_cast<std::uint64_t>(plan.n_silos);
  bytes.hub_to_hub = n * (n - 1) * w * entries * r;
  return bytes;
}

struct ProtocolState {
  std::vector<std::vector<Vector>> client_models;  // [silo][client]
  std::vector<Vector> hub_models;                  // [silo], set at each sync
  MinibatchSchedule schedule;
  // [silo][client][tau]: the client's sample ids in batch tau and the frozen
  // other-silo prediction sums for them, same order.
  std::vector<std::vector<std::vector<std::vector<std::size_t>>>> client_rows;
  std::vector<std::vector<std::vector<Vector>>> stale_phi;
  // Last exchange, kept for inspection: uploads[silo][client][tau], the
  // stacked per-silo values by batch position and the summed other-silo values.
  std::vector<std::vector<std::vector<IntermediateBlock>>> uploads;
  std::vector<std::vector<Vector>> stacked_phi;  // [silo][tau], length B
  std::vector<std::vector<Vector>> other_phi;    // [silo][tau], length B
  std::size_t t = 0;
  std::size_t t0 = 0;
  std::size_t rounds_done = 0;
  bool synced = false;
};

struct RoundRecord {
  std::size_t round = 0;
  std::size_t iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  CommBytes bytes;
  double elapsed_ms = 0.0;
};

struct RunMetrics {
  std::vector<RoundRecord> rounds;
};

namespace detail {

// Fixed-order K-client mean: ((b_0 + b_1) + b_2 + ...) / K.
inline Vector block_mean(const std::vector<Vector>& blocks) {
  Vector sum = blocks.front();
  for (std::size_t k = 1; k < blocks.size(); ++k) sum += blocks[k];
  return sum / static_cast<double>(blocks.size());
}

}  // namespace detail

/// Concatenation over silos of the client-block means (the virtual global model).
inline Vector assemble_global(const ProtocolState& state) {
  Index d = 0;
  for (const auto& silo : state.client_models) d += silo.front().size();
  Vector theta(d);
  Index offset = 0;
  for (const auto& silo : state.client_models) {
    const Vector mean = detail::block_mean(silo);
    theta.segment(offset, mean.size()) = mean;
    offset += mean.size();
  }
  return theta;
}

class TdcdEngine {
 public:
  /// `ds` and `plan` must outlive the engine. SeededRandom init draws one
  /// N(0, 0.01^2) block per silo from the run seed, shared by its clients.
  TdcdEngine(TdcdConfig cfg, const Dataset& ds, const PartitionPlan& plan, LossSpec spec,
             InitKind init = InitKind::Zero)
      : cfg_(std::move(cfg)), ds_(ds), plan_(plan), spec_(std::move(spec)) {
    validate(cfg_, ds_, plan_);
    tdcd::validate(spec_);
    check_labels(spec_, ds_.labels);
    Rng init_rng(splitmix64(cfg_.seed ^ 0x696E6974ULL));
    for (std::size_t j = 0; j < plan_.n_silos; ++j) {
      const Index width = plan_.vertical_blocks[j].width;
      Vector block = Vector::Zero(width);
      if (init == InitKind::SeededRandom) {
        for (Index c = 0; c < width; ++c) block(c) = 0.01 * init_rng.normal();
      }
      state_.client_models.emplace_back(plan_.clients_per_silo, block);
      state_.hub_models.push_back(block);
      owners_.push_back(plan_.owner_table(j));
    }
    last_gradients_.assign(plan_.n_silos, std::vector<Vector>(plan_.clients_per_silo));
  }

  const ProtocolState& state() const { return state_; }
  ProtocolState& mutable_state() { return state_; }
  const TdcdConfig& config() const { return cfg_; }
  const PartitionPlan& plan() const { return plan_; }

  /// Gradients g_kj applied by the most recent local_step, [silo][client].
  const std::vector<std::vector<Vector>>& last_gradients() const { return last_gradients_; }

  /// Each hub replaces its block with the K-client mean and pushes it back.
  void hub_average() {
    for (std::size_t j = 0; j < plan_.n_silos; ++j) {
      state_.hub_models[j] = detail::block_mean(state_.client_models[j]);
      for (auto& client : state_.client_models[j]) client = state_.hub_models[j];
    }
  }

  /// Communication phase. Returns the bytes metered from the payloads moved.
  CommBytes sync_round() {
    if (state_.synced && state_.t - state_.t0 != cfg_.local_steps) {
      throw Error(ErrorKind::InvalidConfig, "sync_round called before Q local steps completed");
    }
    const std::size_t n = plan_.n_silos;
    const std::size_t k_count = plan_.clients_per_silo;
    const std::size_t q = cfg_.local_steps;
    const std::uint64_t w = static_cast<std::uint64_t>(cfg_.float_width / 8);
    CommBytes bytes;

    hub_average();
    for (std::size_t j = 0; j < n; ++j) {
      bytes.client_to_hub += k_count * w * static_cast<std::uint64_t>(plan_.vertical_blocks[j].width);
      bytes.hub_to_client += k_count * w * static_cast<std::uint64_t>(plan_.vertical_blocks[j].width);
    }

    state_.schedule = sample_schedule(cfg_, plan_, state_.rounds_done);
    const auto& batches = state_.schedule.batches;

    // Clients report partial predictions under the freshly averaged block.
    state_.uploads.assign(n, std::vector<std::vector<IntermediateBlock>>(k_count));
    std::vector<std::vector<std::vector<std::vector<std::size_t>>>> positions(
        n, std::vector<std::vector<std::vector<std::size_t>>>(k_count));
    parallel_for(n * k_count, cfg_.threads, [&](std::size_t idx) {
      const std::size_t j = idx / k_count;
      const std::size_t k = idx % k_count;
      const ColumnRange block = plan_.vertical_blocks[j];
      const Vector& theta = state_.hub_models[j];
      auto& out = state_.uploads[j][k];
      auto& pos = positions[j][k];
      out.resize(q);
      pos.resize(q);
      for (std::size_t tau = 0; tau < q; ++tau) {
        IntermediateBlock ib{j, k, tau, {}, {}};
        for (std::size_t i = 0; i < batches[tau].size(); ++i) {
          if (owners_[j][batches[tau][i]] == k) {
            ib.sample_ids.push_back(batches[tau][i]);
            pos[tau].push_back(i);
          }
        }
        ib.values.resize(static_cast<Index>(ib.sample_ids.size()));
        for (std::size_t i = 0; i < ib.sample_ids.size(); ++i) {
          const auto row = ds_.features.row(static_cast<Index>(ib.sample_ids[i]));
          double z = 0.0;
          for (Index c = 0; c < block.width; ++c) z += row(block.begin + c) * theta(c);
          ib.values(static_cast<Index>(i)) = z;
        }
        out[tau] = std::move(ib);
      }
    });

    // Hubs stack client uploads by batch position.
    state_.stacked_phi.assign(n, std::vector<Vector>(q));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t tau = 0; tau < q; ++tau) {
        const std::size_t b = batches[tau].size();
        Vector stacked = Vector::Zero(static_cast<Index>(b));
        std::vector<bool> filled(b, false);
        for (std::size_t k = 0; k < k_count; ++k) {
          const auto& ib = state_.uploads[j][k][tau];
          bytes.client_to_hub += w * ib.sample_ids.size();
          for (std::size_t i = 0; i < ib.sample_ids.size(); ++i) {
            const std::size_t p = positions[j][k][tau][i];
            stacked(static_cast<Index>(p)) = ib.values(static_cast<Index>(i));
            filled[p] = true;
          }
        }
        for (std::size_t p = 0; p < b; ++p) {
          if (!filled[p]) {
            throw Error(ErrorKind::ScheduleMismatch,
                        "sample " + std::to_string(batches[tau][p]) + " has no owner in silo " +
                            std::to_string(j));
          }
        }
        state_.stacked_phi[j][tau] = std::move(stacked);
      }
    }

    // Full-mesh exchange; each hub sums the other silos in ascending order.
    state_.other_phi.assign(n, std::vector<Vector>(q));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t tau = 0; tau < q; ++tau) {
        Vector sum = Vector::Zero(static_cast<Index>(batches[tau].size()));
        for (std::size_t l = 0; l < n; ++l) {
          if (l == j) continue;
          sum += state_.stacked_phi[l][tau];
          bytes.hub_to_hub += w * batches[tau].size();
        }
        state_.other_phi[j][tau] = std::move(sum);
      }
    }

    // Hub-side projection onto each client's rows.
    state_.client_rows.assign(n, std::vector<std::vector<std::vector<std::size_t>>>(k_count));
    state_.stale_phi.assign(n, std::vector<std::vector<Vector>>(k_count));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < k_count; ++k) {
        auto& rows = state_.client_rows[j][k];
        auto& phi = state_.stale_phi[j][k];
        rows.resize(q);
        phi.resize(q);
        for (std::size_t tau = 0; tau < q; ++tau) {
          rows[tau] = state_.uploads[j][k][tau].sample_ids;
          const auto& pos = positions[j][k][tau];
          phi[tau].resize(static_cast<Index>(pos.size()));
          for (std::size_t i = 0; i < pos.size(); ++i) {
            phi[tau](static_cast<Index>(i)) = state_.other_phi[j][tau](static_cast<Index>(pos[i]));
          }
          bytes.hub_to_client += w * pos.size();
        }
      }
    }

    state_.t0 = state_.t;
    state_.synced = true;
    ++state_.rounds_done;
    return bytes;
  }

  /// One synchronous local gradient step of every client on batch t - t0.
  void local_step() {
    if (!state_.synced || state_.t - state_.t0 >= cfg_.local_steps) {
      throw Error(ErrorKind::InvalidConfig, "local_step needs a sync within the last Q iterations");
    }
    const std::size_t tau = state_.t - state_.t0;
    const std::size_t k_count = plan_.clients_per_silo;
    parallel_for(plan_.n_silos * k_count, cfg_.threads, [&](std::size_t idx) {
      const std::size_t j = idx / k_count;
      const std::size_t k = idx % k_count;
      Vector& theta = state_.client_models[j][k];
      last_gradients_[j][k] = partial_gradient(spec_, ds_, state_.client_rows[j][k][tau],
                                               plan_.vertical_blocks[j], theta,
                                               state_.stale_phi[j][k][tau]);
      theta -= cfg_.eta * last_gradients_[j][k];
    });
    ++state_.t;
  }

  Vector assemble_global() const { return tdcd::assemble_global(state_); }

 private:
  TdcdConfig cfg_;
  const Dataset& ds_;
  const PartitionPlan& plan_;
  LossSpec spec_;
  ProtocolState state_;
  std::vector<std::vector<std::uint32_t>> owners_;
  std::vector<std::vector<Vector>> last_gradients_;
};

struct RunResult {
  Vector model;
  RunMetrics metrics;
};

struct RunOptions {
  InitKind init = InitKind::Zero;
  // Wall-clock is nondeterministic; when false elapsed_ms is left at 0.
  bool record_time = false;
};

/// Runs cfg.rounds communication rounds of sync + Q local steps, then one
/// final hub average. Metrics rows 0..rounds-1 are taken at each sync after
/// averaging; row `rounds` holds the final model and carries no traffic.
inline RunResult run_tdcd(const TdcdConfig& cfg, const Dataset& ds, const PartitionPlan& plan,
                          const LossSpec& spec, RunOptions options = {}) {
  TdcdEngine engine(cfg, ds, plan, spec, options.init);
  RunResult result;
  const auto start = std::chrono::steady_clock::now();
  auto record = [&](std::size_t round, const CommBytes& bytes) {
    const Vector theta = engine.assemble_global();
    RoundRecord rec;
    rec.round = round;
    rec.iteration = engine.state().t;
    rec.loss = full_loss(spec, ds, theta);
    rec.grad_norm = full_gradient(spec, ds, theta).norm();
    rec.bytes = bytes;
    if (options.record_time) {
      rec.elapsed_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    result.metrics.rounds.push_back(rec);
  };
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const CommBytes bytes = engine.sync_round();
    record(r, bytes);
    for (std::size_t s = 0; s < cfg.local_steps; ++s) engine.local_step();
  }
  engine.hub_average();
  record(cfg.rounds, CommBytes{});
  result.model = engine.assemble_global();
  return result;
}

}  // namespace tdcd
