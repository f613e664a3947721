#pragma once

// Self-checks run by `tdcd verify`: oracle equivalences, gradient checks,
// step-size feasibility and protocol invariants on a small slice of the
// configured data.

#include "tdcd/data.hpp"
#include "tdcd/experiment.hpp"
#include "tdcd/loss.hpp"
#include "tdcd/oracle.hpp"
#include "tdcd/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>
#include <string>
#include <vector>

namespace tdcd {

inline bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

inline double max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline double relative_error(const Vector& value, const Vector& reference) {
  const double denom = reference.norm();
  return denom == 0.0 ? (value - reference).norm() : (value - reference).norm() / denom;
}

struct InvariantReport {
  bool hub_consistent = true;   // assemble_global == hub concatenation, bitwise, at every sync
  bool stale_frozen = true;     // stale values byte-identical across each round's local steps
  bool drift_bounded = true;    // client drift within Q eta^2 (1/K) sum ||g||^2
  bool bytes_match = true;      // metered bytes == comm_cost closed form
  double worst_drift_ratio = 0.0;
  std::size_t drift_checks = 0;

  bool ok() const { return hub_consistent && stale_frozen && drift_bounded && bytes_match; }
};

/// Drives an engine round by round and checks the protocol invariants after
/// every sync and every local step.
inline InvariantReport instrumented_run(const TdcdConfig& cfg, const Dataset& ds, const PartitionPlan& plan,
                                        const LossSpec& spec, InitKind init = InitKind::Zero) {
  InvariantReport report;
  TdcdEngine engine(cfg, ds, plan, spec, init);
  const std::size_t n = plan.n_silos;
  const std::size_t k_count = plan.clients_per_silo;
  const double q = static_cast<double>(cfg.local_steps);

  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const CommBytes metered = engine.sync_round();
    const auto& st = engine.state();
    if (!(metered == comm_cost(cfg, plan, st.schedule))) report.bytes_match = false;

    Vector hubs(plan.n_cols);
    for (std::size_t j = 0; j < n; ++j) {
      hubs.segment(plan.vertical_blocks[j].begin, plan.vertical_blocks[j].width) = st.hub_models[j];
    }
    if (!bitwise_equal(engine.assemble_global(), hubs)) report.hub_consistent = false;

    const auto frozen = st.stale_phi;
    std::vector<double> grad_sq(n, 0.0);
    for (std::size_t s = 0; s < cfg.local_steps; ++s) {
      engine.local_step();
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < k_count; ++k) grad_sq[j] += engine.last_gradients()[j][k].squaredNorm();
        const Vector mean = detail::block_mean(st.client_models[j]);
        double drift = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) drift += (mean - st.client_models[j][k]).squaredNorm();
        drift /= static_cast<double>(k_count);
        const double bound = q * cfg.eta * cfg.eta * grad_sq[j] / static_cast<double>(k_count);
        ++report.drift_checks;
        if (bound > 0.0) report.worst_drift_ratio = std::max(report.worst_drift_ratio, drift / bound);
        if (drift > bound * (1.0 + 1e-12) + 1e-300) report.drift_bounded = false;
      }
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < k_count; ++k) {
          for (std::size_t tau = 0; tau < cfg.local_steps; ++tau) {
            if (!bitwise_equal(st.stale_phi[j][k][tau], frozen[j][k][tau])) report.stale_frozen = false;
          }
        }
      }
    }
  }
  return report;
}

enum class CheckStatus { Pass, Warn, Fail };

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::Pass;
  std::string detail;
};

namespace detail {

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline CheckResult tolerance_check(const std::string& name, double err, double tol) {
  return {name, err <= tol ? CheckStatus::Pass : CheckStatus::Fail,
          "max error " + sci(err) + " (tolerance " + sci(tol) + ")"};
}

// Largest per-step, per-coordinate gap between an engine run and an oracle
// trace, relative to max(1, |oracle coordinate|).
inline double trace_gap(const TdcdConfig& cfg, const Dataset& ds, const PartitionPlan& plan,
                        const LossSpec& spec, const oracle::OracleTrace& trace) {
  TdcdEngine engine(cfg, ds, plan, spec);
  double worst = 0.0;
  for (std::size_t s = 0; s < cfg.rounds; ++s) {
    engine.sync_round();
    engine.local_step();
    const Vector theta = engine.assemble_global();
    const Vector& ref = trace.iterates[s + 1];
    for (Index c = 0; c < theta.size(); ++c) {
      worst = std::max(worst, std::abs(theta(c) - ref(c)) / std::max(1.0, std::abs(ref(c))));
    }
  }
  return worst;
}

}  // namespace detail

/// Runs every check on the first (at most) 500 rows of the configured data.
inline std::vector<CheckResult> verify_checks(const ExperimentConfig& exp) {
  std::vector<CheckResult> out;
  const Dataset full = prepare_dataset(exp);
  const Dataset ds = take_rows(full, std::min<Index>(500, full.rows()));
  const auto variants = expand_variants(exp, full);
  const Variant& base = variants.front();
  const LossSpec& spec = base.spec;
  const Index m = ds.rows();
  const Index d = ds.cols();

  // Gradient checks at a seeded point.
  Rng rng(exp.training.seed ^ 0x766572696679ULL);
  Vector theta(d);
  for (Index c = 0; c < d; ++c) theta(c) = 0.5 * rng.normal();
  const Vector fd = oracle::finite_diff_gradient(spec, ds, theta, 1e-6);
  out.push_back(detail::tolerance_check("full gradient vs finite differences",
                                        relative_error(full_gradient(spec, ds, theta), fd), 1e-6));
  const auto plan_k1 = make_partition(m, d, base.cfg.n_silos, 1, base.widths);
  const Vector z = ds.features * theta;
  double block_err = 0.0;
  for (const auto& block : plan_k1.vertical_blocks) {
    const Vector own = ds.features.middleCols(block.begin, block.width) * theta.segment(block.begin, block.width);
    const Vector g = partial_gradient(spec, ds.features.middleCols(block.begin, block.width), ds.labels,
                                      theta.segment(block.begin, block.width), z - own, block.begin);
    block_err = std::max(block_err, relative_error(g, fd.segment(block.begin, block.width)));
  }
  out.push_back(detail::tolerance_check("block partial gradients vs finite differences", block_err, 1e-6));

  // Step-size feasibility for the configured Q and eta.
  const auto method = d <= 512 ? LipschitzMethod::exact() : LipschitzMethod::power_iteration();
  const auto plan_cfg = make_partition(m, d, base.cfg.n_silos, 1, base.widths);
  const auto info = estimate_lipschitz(spec, ds, plan_cfg, method);
  const int q = static_cast<int>(base.cfg.local_steps);
  const double eta_star = max_step_size(info, q);
  out.push_back({"step size feasibility", base.cfg.eta <= eta_star ? CheckStatus::Pass : CheckStatus::Warn,
                 "eta " + detail::sci(base.cfg.eta) + ", max feasible " + detail::sci(eta_star) + " (L " +
                     detail::sci(info.L) + ", L_max " + detail::sci(info.L_max) + ", Q " + std::to_string(q) + ")"});

  const double eta = std::min(base.cfg.eta, 0.9 / info.L);
  const std::size_t steps = 20;
  const Vector zero = Vector::Zero(d);
  TdcdConfig degenerate;
  degenerate.eta = eta;
  degenerate.rounds = steps;
  degenerate.seed = base.cfg.seed;

  {
    TdcdConfig c = degenerate;
    c.batch_size = static_cast<std::size_t>(m);
    const auto plan = make_partition(m, d, 1, 1);
    const auto trace = oracle::centralized_gd(spec, ds, eta, steps, zero);
    out.push_back(detail::tolerance_check("N=1 K=1 Q=1 B=M vs gradient descent",
                                          detail::trace_gap(c, ds, plan, spec, trace), 1e-12));
  }
  {
    TdcdConfig c = degenerate;
    c.n_silos = base.cfg.n_silos;
    c.batch_size = static_cast<std::size_t>(m);
    const auto plan = make_partition(m, d, c.n_silos, 1, base.widths);
    const auto trace = oracle::parallel_block_gd(spec, ds, plan.vertical_blocks, eta, steps, zero);
    out.push_back(detail::tolerance_check("Q=1 B=M vs parallel block gradient descent",
                                          detail::trace_gap(c, ds, plan, spec, trace), 1e-10));
  }
  {
    TdcdConfig c = degenerate;
    c.batch_size = std::min<std::size_t>(base.cfg.batch_size, static_cast<std::size_t>(m));
    const auto plan = make_partition(m, d, 1, 1);
    const auto trace = oracle::centralized_sgd(spec, ds, eta, steps, c.batch_size, c.seed, zero);
    out.push_back(detail::tolerance_check("N=1 K=1 Q=1 vs minibatch SGD",
                                          detail::trace_gap(c, ds, plan, spec, trace), 1e-12));
  }

  // Protocol invariants on the configured topology.
  {
    TdcdConfig c = base.cfg;
    c.rounds = 5;
    c.threads = 1;
    const std::size_t k = c.clients;
    if (static_cast<Index>(k) > m) {
      out.push_back({"protocol invariants", CheckStatus::Fail, "K exceeds the verification slice"});
    } else {
      const std::size_t min_shard = static_cast<std::size_t>(m) / k;
      std::size_t b = std::min(c.batch_size, min_shard * k);
      if (c.sampling == Sampling::Stratified) b = std::max(k, b - b % k);
      c.batch_size = b;
      const auto plan =
          make_partition(m, d, c.n_silos, c.clients, base.widths, exp.row_scheme, exp.row_seed);
      const auto rep = instrumented_run(c, ds, plan, spec, exp.init);
      std::string detail = std::string("hub average ") + (rep.hub_consistent ? "ok" : "BROKEN") + ", staleness " +
                           (rep.stale_frozen ? "ok" : "BROKEN") + ", drift " +
                           (rep.drift_bounded ? "ok" : "BROKEN") + " (worst ratio " +
                           detail::sci(rep.worst_drift_ratio) + "), bytes " + (rep.bytes_match ? "ok" : "BROKEN");
      out.push_back({"protocol invariants", rep.ok() ? CheckStatus::Pass : CheckStatus::Fail, detail});
    }
  }
  return out;
}

inline int verify(const ExperimentConfig& exp, std::ostream& os) {
  std::vector<CheckResult> results;
  try {
    results = verify_checks(exp);
  } catch (const std::exception& e) {
    os << "FAIL setup: " << e.what() << '\n';
    return 1;
  }
  bool failed = false;
  for (const auto& r : results) {
    const char* tag = r.status == CheckStatus::Pass ? "PASS" : r.status == CheckStatus::Warn ? "WARN" : "FAIL";
    os << tag << ' ' << r.name << ": " << r.detail << '\n';
    failed = failed || r.status == CheckStatus::Fail;
  }
  return failed ? 1 : 0;
}

}  // namespace tdcd
