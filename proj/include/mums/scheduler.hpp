#pragma once

// Per-epoch request allocation.
//
// The variance-minimizing scheduler solves, each epoch,
//
//   min t  s.t.  sum a_i R_i  >= T
//                sum a_i Ru_i <= T + t
//                sum a_i Rl_i >= T - t
//                0 <= a_i <= w_i
//
// over fractional request counts a_i, using the estimator's mean rate R, its
// Cantelli bounds Ru/Rl and the CUBIC window w. Fractional solutions become
// integer requests through a per-server carry of excess credit. The Min-RTT,
// single-server and aggressive baselines live here too.

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "mums/domain.hpp"
#include "mums/estimator.hpp"
#include "mums/lp.hpp"

namespace mums::scheduler {

using estimator::PathEstimate;

struct SchedulerConfig {
  Rate target_rate{1.0};
  Duration epoch_length = Duration::seconds(1.0);
  double backoff_factor = 0.9;
  double recovery_factor = 1.3;

  void validate(Rate playback_rate) const {
    if (target_rate < playback_rate) throw std::invalid_argument("target rate below playback rate");
    if (epoch_length <= Duration{}) throw std::invalid_argument("epoch length must be positive");
    if (!(backoff_factor > 0.0 && backoff_factor < 1.0 && recovery_factor > 1.0)) {
      throw std::invalid_argument("need 0 < backoff < 1 < recovery");
    }
  }
};

struct ServerAlloc {
  ServerId server;
  double alpha = 0.0;
};

struct Allocation {
  std::vector<ServerAlloc> per_server;  // same order as the input paths
  double achieved_deviation = 0.0;
  Rate effective_target;

  double alpha(ServerId s) const {
    for (const auto& a : per_server)
      if (a.server == s) return a.alpha;
    return 0.0;
  }
  std::size_t support() const {
    return static_cast<std::size_t>(std::count_if(per_server.begin(), per_server.end(),
                                                  [](const ServerAlloc& a) { return a.alpha > 1e-12; }));
  }
};

struct SchedulerState {
  std::map<ServerId, double> excess;
  std::map<ServerId, double> usage_history;
  bool deficit_mode = false;
  Rate current_target;
};

inline SchedulerState make_state(const SchedulerConfig& cfg) {
  SchedulerState s;
  s.current_target = cfg.target_rate;
  return s;
}

/// Largest violation of the allocation constraints (0 when all hold).
inline double constraint_residual(std::span<const PathEstimate> paths, const Allocation& a, double target) {
  double rate = 0.0, up = 0.0, lo = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const double x = a.per_server[i].alpha;
    worst = std::max({worst, -x, x - paths[i].window});
    rate += x * paths[i].mean_rate.value();
    up += x * paths[i].upper_rate.value();
    lo += x * paths[i].lower_rate.value();
  }
  const double t = a.achieved_deviation;
  return std::max({worst, target - rate, up - (target + t), (target - t) - lo});
}

namespace detail {

struct Restricted {
  bool feasible = false;
  double t = 0.0;
  std::vector<double> alpha;  // indexed like `paths`
};

// Solves the allocation LP with only the servers in `mask` allowed. When
// `t_cap` is set, instead minimizes the total rate among solutions whose
// deviation is at most the cap.
inline Restricted solve_restricted(std::span<const PathEstimate> paths, double target, unsigned mask,
                                   std::optional<double> t_cap) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < paths.size(); ++i)
    if (mask & (1u << i)) idx.push_back(static_cast<int>(i));
  const int k = static_cast<int>(idx.size());
  const int nv = k + 1;  // alphas then t
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  auto row = [&] { return std::vector<double>(nv, 0.0); };

  auto r1 = row(), r2 = row(), r3 = row();
  for (int j = 0; j < k; ++j) {
    const auto& p = paths[idx[j]];
    r1[j] = -p.mean_rate.value();
    r2[j] = p.upper_rate.value();
    r3[j] = -p.lower_rate.value();
  }
  r2[k] = -1.0;
  r3[k] = -1.0;
  a.push_back(r1), b.push_back(-target);
  a.push_back(r2), b.push_back(target);
  a.push_back(r3), b.push_back(-target);
  for (int j = 0; j < k; ++j) {
    auto r = row();
    r[j] = 1.0;
    a.push_back(r), b.push_back(paths[idx[j]].window);
  }
  std::vector<double> c(nv, 0.0);
  if (t_cap) {
    auto r = row();
    r[k] = 1.0;
    a.push_back(r), b.push_back(*t_cap);
    for (int j = 0; j < k; ++j) c[j] = -paths[idx[j]].mean_rate.value();
  } else {
    c[k] = -1.0;
  }

  const auto res = lp::maximize(a, b, c);
  Restricted out;
  if (res.status != lp::Status::Optimal) return out;
  out.feasible = true;
  out.alpha.assign(paths.size(), 0.0);
  for (int j = 0; j < k; ++j) out.alpha[idx[j]] = std::clamp(res.x[j], 0.0, paths[idx[j]].window);
  double up = 0.0, lo = 0.0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    up += out.alpha[i] * paths[i].upper_rate.value();
    lo += out.alpha[i] * paths[i].lower_rate.value();
  }
  out.t = std::max({0.0, up - target, target - lo});
  return out;
}

}  // namespace detail

/// Optimal allocation at `target`, or nullopt when infeasible.
///
/// Among allocations with optimal deviation the one with the fewest servers
/// wins; equal-size supports are ranked by summed `usage` (descending, then by
/// position); within the chosen support the lowest total rate is taken.
inline std::optional<Allocation> solve_lp(std::span<const PathEstimate> paths, Rate target,
                                          std::span<const double> usage = {}) {
  if (paths.empty()) throw std::invalid_argument("solve_lp: no paths");
  if (paths.size() > 16) throw std::invalid_argument("solve_lp: too many paths");
  const double T = target.value();
  const unsigned n = static_cast<unsigned>(paths.size());
  const unsigned full = (1u << n) - 1u;

  const auto best = detail::solve_restricted(paths, T, full, std::nullopt);
  if (!best.feasible) return std::nullopt;
  const double tol = 1e-9 * std::max(1.0, best.t);

  std::vector<unsigned> masks(full);
  std::iota(masks.begin(), masks.end(), 1u);
  auto usage_of = [&](unsigned m) {
    double u = 0.0;
    for (unsigned i = 0; i < n; ++i)
      if ((m & (1u << i)) && i < usage.size()) u += usage[i];
    return u;
  };
  auto lex_key = [&](unsigned m) {
    // Lower positions first: reverse bit order so {0} < {1} < {0,1}...
    unsigned r = 0;
    for (unsigned i = 0; i < n; ++i)
      if (m & (1u << i)) r |= 1u << (n - 1 - i);
    return r;
  };
  std::stable_sort(masks.begin(), masks.end(), [&](unsigned x, unsigned y) {
    const int px = std::popcount(x), py = std::popcount(y);
    if (px != py) return px < py;
    const double ux = usage_of(x), uy = usage_of(y);
    if (ux != uy) return ux > uy;
    return lex_key(x) > lex_key(y);
  });

  for (unsigned m : masks) {
    // Cheap capacity screen before solving.
    double cap = 0.0;
    for (unsigned i = 0; i < n; ++i)
      if (m & (1u << i)) cap += paths[i].window * paths[i].mean_rate.value();
    if (cap < T * (1.0 - 1e-12)) continue;
    const auto r = detail::solve_restricted(paths, T, m, std::nullopt);
    if (!r.feasible || r.t > best.t + tol) continue;
    auto lean = detail::solve_restricted(paths, T, m, r.t + tol);
    const auto& pick = (lean.feasible && lean.t <= best.t + 2 * tol) ? lean : r;
    Allocation out;
    out.effective_target = target;
    out.achieved_deviation = pick.t;
    for (unsigned i = 0; i < n; ++i) out.per_server.push_back({paths[i].server, pick.alpha[i]});
    return out;
  }
  // Unreachable in exact arithmetic: the full set is always a candidate.
  Allocation out;
  out.effective_target = target;
  out.achieved_deviation = best.t;
  for (unsigned i = 0; i < n; ++i) out.per_server.push_back({paths[i].server, best.alpha[i]});
  return out;
}

struct EpochDecision {
  std::vector<std::pair<ServerId, int>> requests;  // same order as paths
  SchedulerState state;
  std::optional<Allocation> allocation;
  /// Targets tried this epoch, in order.
  std::vector<double> tried_targets;
};

inline EpochDecision schedule_epoch(SchedulerState state, const SchedulerConfig& cfg,
                                    std::span<const PathEstimate> paths) {
  EpochDecision out;
  const double epoch_s = cfg.epoch_length.secs();
  const double full = cfg.target_rate.value();
  double target = state.deficit_mode ? std::min(full, state.current_target.value() * cfg.recovery_factor) : full;

  std::vector<double> usage;
  for (const auto& p : paths) usage.push_back(state.usage_history[p.server]);

  std::optional<Allocation> alloc;
  for (;;) {
    out.tried_targets.push_back(target);
    alloc = solve_lp(paths, Rate(target), usage);
    if (alloc) break;
    target *= cfg.backoff_factor;
    if (target * epoch_s < 1.0) break;
  }

  state.current_target = Rate(target);
  state.deficit_mode = !alloc || target < full;

  for (const auto& p : paths) {
    int req = 0;
    if (alloc) {
      const double want = alloc->alpha(p.server) * p.mean_rate.value() * epoch_s;
      double& y = state.excess[p.server];
      const double net = std::max(want - y, 0.0);
      req = static_cast<int>(std::ceil(net - 1e-9));
      y = std::max(0.0, y + req - want);
      state.usage_history[p.server] += req;
    }
    out.requests.emplace_back(p.server, req);
  }
  out.allocation = std::move(alloc);
  out.state = std::move(state);
  return out;
}

struct Assignment {
  std::vector<std::pair<ServerId, int>> counts;  // same order as paths
  int unassigned = 0;
};

/// Fills capacities in order of expected completion time 1/R (ties by server id).
inline Assignment min_rtt_schedule(std::span<const PathEstimate> paths, int demand, std::span<const int> room) {
  if (demand <= 0) throw std::invalid_argument("min_rtt_schedule: demand must be positive");
  std::vector<std::size_t> order(paths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ra = paths[a].mean_rate.value(), rb = paths[b].mean_rate.value();
    if (ra != rb) return ra > rb;
    return paths[a].server < paths[b].server;
  });
  Assignment out;
  for (const auto& p : paths) out.counts.emplace_back(p.server, 0);
  int left = demand;
  for (std::size_t i : order) {
    const int take = std::min(left, std::max(0, room[i]));
    out.counts[i].second = take;
    left -= take;
  }
  out.unassigned = left;
  return out;
}

inline Assignment min_rtt_schedule(std::span<const PathEstimate> paths, int demand) {
  std::vector<int> room;
  for (const auto& p : paths) room.push_back(static_cast<int>(std::floor(p.window)));
  return min_rtt_schedule(paths, demand, room);
}

/// Throughput-maximizing baseline: the full window from every server, every epoch.
inline std::vector<std::pair<ServerId, int>> aggressive_schedule(std::span<const PathEstimate> paths,
                                                                 Duration /*epoch*/) {
  std::vector<std::pair<ServerId, int>> out;
  for (const auto& p : paths) out.emplace_back(p.server, static_cast<int>(std::floor(p.window)));
  return out;
}

}  // namespace mums::scheduler
