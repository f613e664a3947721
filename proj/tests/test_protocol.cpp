#include "tdcd/oracle.hpp"
#include "tdcd/protocol.hpp"
#include "tdcd/verify.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace tdcd;

namespace {

LossSpec ridge(double lambda) { return {LossFamily::Ridge, lambda, 1, {}}; }

TdcdConfig config(std::size_t n, std::size_t k, std::size_t q, std::size_t b, double eta, std::size_t rounds) {
  TdcdConfig cfg;
  cfg.n_silos = n;
  cfg.clients = k;
  cfg.local_steps = q;
  cfg.batch_size = b;
  cfg.eta = eta;
  cfg.rounds = rounds;
  cfg.seed = 42;
  return cfg;
}

}  // namespace

TEST(Schedule, StratifiedBatchesTakeEqualShares) {
  const auto plan = make_partition(30, 4, 2, 3);
  const auto cfg = config(2, 3, 4, 6, 0.1, 1);
  const auto schedule = sample_schedule(cfg, plan, 7);
  ASSERT_EQ(schedule.batches.size(), 4u);
  const auto owner = plan.owner_table(0);
  for (const auto& batch : schedule.batches) {
    ASSERT_EQ(batch.size(), 6u);
    std::vector<int> per_client(3, 0);
    std::set<std::size_t> unique;
    for (std::size_t id : batch) {
      ASSERT_LT(id, 30u);
      ++per_client[owner[id]];
      unique.insert(id);
    }
    EXPECT_EQ(unique.size(), 6u);
    EXPECT_EQ(per_client, (std::vector<int>{2, 2, 2}));
  }
}

TEST(Schedule, PureFunctionOfSeedAndRound) {
  const auto plan = make_partition(30, 4, 2, 3);
  auto cfg = config(2, 3, 2, 6, 0.1, 1);
  EXPECT_EQ(sample_schedule(cfg, plan, 3).batches, sample_schedule(cfg, plan, 3).batches);
  EXPECT_NE(sample_schedule(cfg, plan, 3).batches, sample_schedule(cfg, plan, 4).batches);
  cfg.sampling = Sampling::GlobalUniform;
  EXPECT_EQ(sample_schedule(cfg, plan, 3).batches, sample_schedule(cfg, plan, 3).batches);
}

TEST(Config, StratifiedPreconditions) {
  const auto [ds, w] = synth_regression(1, 20, 4, 0.0);
  const auto plan = make_partition(20, 4, 2, 3);
  EXPECT_THROW(TdcdEngine(config(2, 3, 1, 4, 0.1, 1), ds, plan, ridge(0)), Error);    // K does not divide B
  EXPECT_THROW(TdcdEngine(config(2, 3, 1, 21, 0.1, 1), ds, plan, ridge(0)), Error);   // B > M
  EXPECT_THROW(TdcdEngine(config(2, 3, 0, 3, 0.1, 1), ds, plan, ridge(0)), Error);    // Q = 0
  EXPECT_THROW(TdcdEngine(config(3, 3, 1, 3, 0.1, 1), ds, plan, ridge(0)), Error);    // N != plan
  EXPECT_THROW(TdcdEngine(config(2, 3, 1, 3, -1.0, 1), ds, plan, ridge(0)), Error);   // eta < 0
  const auto strided = make_partition(20, 4, 2, 2, {}, RowScheme::Strided, 5);
  EXPECT_THROW(TdcdEngine(config(2, 2, 1, 2, 0.1, 1), ds, strided, ridge(0)), Error);
  auto global = config(2, 2, 1, 2, 0.1, 1);
  global.sampling = Sampling::GlobalUniform;
  EXPECT_NO_THROW(TdcdEngine(global, ds, strided, ridge(0)));
}

TEST(SyncRound, SingleSiloSeesZeroOtherSum) {
  const auto [ds, w] = synth_regression(1, 20, 4, 0.0);
  const auto plan = make_partition(20, 4, 1, 2);
  TdcdEngine engine(config(1, 2, 3, 4, 0.1, 1), ds, plan, ridge(0), InitKind::SeededRandom);
  engine.sync_round();
  for (const auto& client : engine.state().stale_phi[0]) {
    for (const auto& phi : client) EXPECT_TRUE(phi.isZero(0.0));
  }
}

TEST(SyncRound, SingleClientAverageIsIdentity) {
  const auto [ds, w] = synth_regression(1, 20, 4, 0.0);
  const auto plan = make_partition(20, 4, 2, 1);
  TdcdEngine engine(config(2, 1, 1, 5, 0.1, 1), ds, plan, ridge(0));
  Vector a(2), b(2);
  a << 0.25, -3;
  b << 7, 1.5;
  engine.mutable_state().client_models[0][0] = a;
  engine.mutable_state().client_models[1][0] = b;
  engine.sync_round();
  EXPECT_EQ(engine.state().client_models[0][0], a);
  EXPECT_EQ(engine.state().hub_models[1], b);
}

TEST(SyncRound, TwoSiloExchangeByHand) {
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  Vector y(2);
  y << 0, 0;
  const Dataset ds = test::dataset_from(x, y);
  const auto plan = make_partition(2, 2, 2, 1);
  TdcdEngine engine(config(2, 1, 1, 2, 0.1, 1), ds, plan, ridge(0));
  Vector t0(1), t1(1);
  t0 << 0.5;
  t1 << -1;
  engine.mutable_state().client_models[0][0] = t0;
  engine.mutable_state().client_models[1][0] = t1;
  engine.sync_round();
  const auto& st = engine.state();
  // Silo 0 receives silo 1's predictions: sample 0 -> 2 * -1, sample 1 -> 4 * -1.
  // Silo 1 receives silo 0's: sample 0 -> 0.5, sample 1 -> 1.5.
  const double for_silo0[] = {-2.0, -4.0};
  const double for_silo1[] = {0.5, 1.5};
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t id0 = st.client_rows[0][0][0][i];
    const std::size_t id1 = st.client_rows[1][0][0][i];
    EXPECT_EQ(st.stale_phi[0][0][0](static_cast<Index>(i)), for_silo0[id0]);
    EXPECT_EQ(st.stale_phi[1][0][0](static_cast<Index>(i)), for_silo1[id1]);
  }
}

TEST(SyncRound, StackedValuesSumToFullPrediction) {
  const auto [ds, w] = synth_regression(3, 40, 9, 0.1);
  const auto plan = make_partition(40, 9, 3, 4);
  TdcdEngine engine(config(3, 4, 3, 8, 0.05, 1), ds, plan, ridge(0.1), InitKind::SeededRandom);
  engine.sync_round();
  engine.local_step();
  engine.local_step();
  engine.local_step();
  engine.sync_round();
  const auto& st = engine.state();
  const Vector theta = engine.assemble_global();
  for (std::size_t tau = 0; tau < 3; ++tau) {
    for (std::size_t i = 0; i < st.schedule.batches[tau].size(); ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 3; ++j) sum += st.stacked_phi[j][tau](static_cast<Index>(i));
      const double direct = ds.features.row(static_cast<Index>(st.schedule.batches[tau][i])).dot(theta);
      EXPECT_NEAR(sum, direct, 1e-12);
      EXPECT_NEAR(st.other_phi[0][tau](static_cast<Index>(i)),
                  sum - st.stacked_phi[0][tau](static_cast<Index>(i)), 1e-12);
    }
  }
}

TEST(SyncRound, UploadsFollowBatchOrder) {
  const auto [ds, w] = synth_regression(3, 40, 4, 0.1);
  auto cfg = config(2, 4, 2, 10, 0.05, 1);
  cfg.sampling = Sampling::GlobalUniform;
  const auto plan = make_partition(40, 4, 2, 4);
  TdcdEngine engine(cfg, ds, plan, ridge(0.1));
  engine.sync_round();
  const auto& st = engine.state();
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t tau = 0; tau < 2; ++tau) {
      std::vector<std::size_t> expected;
      for (std::size_t id : st.schedule.batches[tau]) {
        if (plan.owner_table(1)[id] == k) expected.push_back(id);
      }
      EXPECT_EQ(st.uploads[1][k][tau].sample_ids, expected);
    }
  }
}

TEST(LocalStep, ZeroStepLeavesStateUnchanged) {
  const auto [ds, w] = synth_regression(3, 40, 6, 0.1);
  const auto plan = make_partition(40, 6, 2, 2);
  TdcdEngine engine(config(2, 2, 2, 4, 0.0, 1), ds, plan, ridge(0.1), InitKind::SeededRandom);
  engine.sync_round();
  const auto before = engine.state().client_models;
  engine.local_step();
  EXPECT_EQ(engine.state().client_models, before);
  EXPECT_EQ(engine.state().t, 1u);
}

TEST(LocalStep, DegenerateIsOneGradientDescentStep) {
  const auto [ds, w] = synth_regression(5, 30, 4, 0.2);
  const auto plan = make_partition(30, 4, 1, 1);
  TdcdEngine engine(config(1, 1, 1, 30, 0.07, 1), ds, plan, ridge(0.3));
  engine.sync_round();
  engine.local_step();
  const Vector expected = -0.07 * full_gradient(ridge(0.3), ds, Vector::Zero(4));
  EXPECT_LT((engine.assemble_global() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LocalStep, StaleValuesFrozenBetweenSyncs) {
  const auto [ds, w] = synth_regression(3, 40, 6, 0.1);
  const auto plan = make_partition(40, 6, 3, 2);
  TdcdEngine engine(config(3, 2, 2, 4, 0.1, 1), ds, plan, ridge(0.1));
  engine.sync_round();
  const auto frozen = engine.state().stale_phi;
  const auto start = engine.state().client_models;
  engine.local_step();
  const auto mid = engine.state().client_models;
  engine.local_step();
  EXPECT_NE(engine.state().client_models, mid);
  EXPECT_NE(mid, start);
  EXPECT_EQ(engine.state().stale_phi, frozen);
  EXPECT_THROW(engine.local_step(), Error);
}

TEST(LocalStep, GlobalSamplingHandlesEmptyClients) {
  const auto [ds, w] = synth_regression(3, 40, 4, 0.1);
  auto cfg = config(2, 8, 1, 2, 0.1, 1);
  cfg.sampling = Sampling::GlobalUniform;
  const auto plan = make_partition(40, 4, 2, 8);
  TdcdEngine engine(cfg, ds, plan, ridge(0.5), InitKind::SeededRandom);
  engine.sync_round();
  const auto before = engine.state().client_models;
  engine.local_step();
  std::size_t idle = 0;
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 8; ++k) {
      if (!engine.state().client_rows[j][k][0].empty()) continue;
      ++idle;
      EXPECT_TRUE(engine.last_gradients()[j][k].isApprox(0.5 * before[j][k]));
    }
  }
  EXPECT_GE(idle, 12u);  // at most two clients per silo hold samples
}

TEST(AssembleGlobal, MeanOfClientBlocks) {
  ProtocolState st;
  Vector a(2), b(2), c(1);
  a << 1, 3;
  b << 3, 5;
  c << 9;
  st.client_models = {{a, b}, {c, c}};
  Vector expected(3);
  expected << 2, 4, 9;
  EXPECT_EQ(assemble_global(st), expected);
  st.client_models = {{a}, {c}};
  Vector single(3);
  single << 1, 3, 9;
  EXPECT_EQ(assemble_global(st), single);
}

TEST(CommCost, HandCountTwoSilos) {
  const auto plan = make_partition(8, 6, 2, 1);
  auto cfg = config(2, 1, 1, 4, 0.1, 1);
  const auto schedule = sample_schedule(cfg, plan, 0);
  const CommBytes bytes = comm_cost(cfg, plan, schedule);
  EXPECT_EQ(bytes.client_to_hub, 112u);  // 2 clients * 8 bytes * (3 weights + 4 values)
  EXPECT_EQ(bytes.hub_to_client, 112u);
  EXPECT_EQ(bytes.hub_to_hub, 64u);      // 2 * 1 * 8 * 4
  cfg.float_width = 32;
  EXPECT_EQ(comm_cost(cfg, plan, schedule).client_to_hub, 56u);
}

TEST(CommCost, LinearInLocalSteps) {
  const auto plan = make_partition(40, 6, 3, 2);
  auto cfg = config(3, 2, 2, 4, 0.1, 1);
  const auto c2 = comm_cost(cfg, plan, sample_schedule(cfg, plan, 0));
  cfg.local_steps = 4;
  const auto c4 = comm_cost(cfg, plan, sample_schedule(cfg, plan, 0));
  const std::uint64_t model_bytes = 8 * 2 * 6;  // K * sum_j D_j weights
  EXPECT_EQ(c4.client_to_hub - model_bytes, 2 * (c2.client_to_hub - model_bytes));
  EXPECT_EQ(c4.hub_to_hub, 2 * c2.hub_to_hub);
}

TEST(CommCost, SingleSiloHasNoPeers) {
  const auto plan = make_partition(10, 3, 1, 2);
  const auto cfg = config(1, 2, 3, 4, 0.1, 1);
  EXPECT_EQ(comm_cost(cfg, plan, sample_schedule(cfg, plan, 0)).hub_to_hub, 0u);
}

TEST(CommCost, MeteredBytesMatchClosedForm) {
  const auto [ds, w] = synth_regression(3, 60, 7, 0.1);
  for (auto sampling : {Sampling::Stratified, Sampling::GlobalUniform}) {
    auto cfg = config(3, 3, 3, 9, 0.05, 4);
    cfg.sampling = sampling;
    cfg.float_width = sampling == Sampling::Stratified ? 64 : 32;
    const auto plan = make_partition(60, 7, 3, 3);
    EXPECT_TRUE(instrumented_run(cfg, ds, plan, ridge(0.1)).bytes_match);
    const auto result = run_tdcd(cfg, ds, plan, ridge(0.1));
    TdcdEngine replay(cfg, ds, plan, ridge(0.1));
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
      const auto metered = replay.sync_round();
      EXPECT_EQ(metered, comm_cost(cfg, plan, replay.state().schedule));
      EXPECT_EQ(result.metrics.rounds[r].bytes, metered);
      for (std::size_t s = 0; s < cfg.local_steps; ++s) replay.local_step();
    }
  }
}

TEST(RunTdcd, ZeroStepRunStaysAtInit) {
  const auto [ds, w] = synth_regression(3, 20, 4, 0.1);
  const auto plan = make_partition(20, 4, 2, 2);
  const auto result = run_tdcd(config(2, 2, 2, 4, 0.0, 1), ds, plan, ridge(1.0));
  EXPECT_TRUE(result.model.isZero(0.0));
  ASSERT_EQ(result.metrics.rounds.size(), 2u);
  EXPECT_EQ(result.metrics.rounds.back().loss, full_loss(ridge(1.0), ds, Vector::Zero(4)));
  EXPECT_EQ(result.metrics.rounds.back().iteration, 2u);
}

TEST(RunTdcd, DeterministicAcrossThreadCounts) {
  const auto [ds, w] = synth_regression(3, 100, 10, 0.3);
  const auto plan = make_partition(100, 10, 3, 5);
  auto cfg = config(3, 5, 3, 10, 0.05, 10);
  const auto a = run_tdcd(cfg, ds, plan, ridge(0.1));
  cfg.threads = 4;
  const auto b = run_tdcd(cfg, ds, plan, ridge(0.1));
  std::ostringstream sa, sb;
  write_metrics_csv(sa, a.metrics);
  write_metrics_csv(sb, b.metrics);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_TRUE(bitwise_equal(a.model, b.model));
}

TEST(RunTdcd, BlockEquivalenceWithEqualShards) {
  const auto [ds, w] = synth_regression(7, 60, 9, 0.3);
  const auto spec = ridge(0.2);
  const auto plan = make_partition(60, 9, 3, 2);
  auto cfg = config(3, 2, 1, 60, 0.1, 1);
  TdcdEngine engine(cfg, ds, plan, spec);
  const auto trace = oracle::parallel_block_gd(spec, ds, plan.vertical_blocks, 0.1, 30, Vector::Zero(9));
  for (std::size_t s = 0; s < 30; ++s) {
    engine.sync_round();
    engine.local_step();
    EXPECT_LT((engine.assemble_global() - trace.iterates[s + 1]).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Invariants, InstrumentedRunHolds) {
  const auto [ds, w] = synth_regression(9, 120, 12, 0.3);
  const auto plan = make_partition(120, 12, 3, 4);
  auto cfg = config(3, 4, 5, 12, 0.02, 6);
  const auto rep = instrumented_run(cfg, ds, plan, ridge(0.1), InitKind::SeededRandom);
  EXPECT_TRUE(rep.hub_consistent);
  EXPECT_TRUE(rep.stale_frozen);
  EXPECT_TRUE(rep.drift_bounded);
  EXPECT_GT(rep.worst_drift_ratio, 0.0);
  EXPECT_LE(rep.worst_drift_ratio, 1.0);
}
