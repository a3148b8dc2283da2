#pragma once

// Request manager: chunk lifecycle records, per-server subflows with an
// RTO-style timer, dispatch of scheduler counts onto concrete chunks,
// timeout retry/skip decisions and opportunistic retransmission of the
// head-of-line chunk.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "mums/domain.hpp"
#include "mums/estimator.hpp"

namespace mums::transport {

using estimator::PathEstimate;
using estimator::RateSample;

enum class ChunkState { Unrequested, Outstanding, Received, Skipped };

inline bool terminal(ChunkState s) { return s == ChunkState::Received || s == ChunkState::Skipped; }

struct ChunkRecord {
  ChunkId chunk;
  ChunkState state = ChunkState::Unrequested;
  std::optional<ServerId> assigned_server;
  std::optional<SimTime> request_time;
  std::optional<SimTime> completed_at;
  std::uint32_t retries = 0;
  /// Incremented on every send of this chunk; only the latest attempt's
  /// timer is live.
  std::uint32_t attempt = 0;
  bool duplicated = false;
};

struct TransportConfig {
  std::uint32_t retry_limit = 3;
  Duration min_rto = Duration::millis(200);
  Duration initial_rto = Duration::seconds(3.0);
  Duration max_rto = Duration::seconds(60.0);
};

/// One server's connection: requests in flight and an RTO estimator fed by
/// completion times (smoothed time + 4 x deviation, floored). Each timeout
/// doubles the timer until the next completion (Karn).
struct SubflowState {
  ServerId server;
  std::set<std::uint32_t> outstanding;
  double srtt_s = 0.0;
  double rttvar_s = 0.0;
  bool has_sample = false;
  std::uint32_t backoff = 0;

  void record_timeout() { backoff = std::min<std::uint32_t>(backoff + 1, 16); }

  void record_completion(double seconds) {
    backoff = 0;
    if (!has_sample) {
      srtt_s = seconds;
      rttvar_s = seconds / 2.0;
      has_sample = true;
      return;
    }
    rttvar_s = 0.75 * rttvar_s + 0.25 * std::fabs(srtt_s - seconds);
    srtt_s = 0.875 * srtt_s + 0.125 * seconds;
  }

  Duration timeout(const TransportConfig& cfg = {}) const {
    const double base = has_sample ? std::max(cfg.min_rto.secs(), srtt_s + 4.0 * rttvar_s)
                                   : std::max(cfg.initial_rto, cfg.min_rto).secs();
    return Duration::seconds(std::min(cfg.max_rto.secs(), std::ldexp(base, static_cast<int>(backoff))));
  }
};

inline std::vector<std::size_t> by_rate_desc(std::span<const PathEstimate> paths) {
  std::vector<std::size_t> order(paths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ra = paths[a].mean_rate.value(), rb = paths[b].mean_rate.value();
    if (ra != rb) return ra > rb;
    return paths[a].server < paths[b].server;
  });
  return order;
}

/// Maps per-server request counts onto the lowest-index pending chunks.
/// Servers take contiguous runs in order of descending rate, so the earliest
/// needed chunks ride the fastest paths.
inline std::vector<std::pair<ChunkId, ServerId>> dispatch(std::span<const std::pair<ServerId, int>> requests,
                                                          std::span<const ChunkId> pending,
                                                          std::span<const PathEstimate> paths) {
  std::vector<std::pair<ChunkId, ServerId>> out;
  auto count_for = [&](ServerId s) {
    int c = 0;
    for (const auto& [srv, n] : requests)
      if (srv == s) c += std::max(0, n);
    return c;
  };
  std::size_t next = 0;
  std::vector<ServerId> order;
  for (std::size_t i : by_rate_desc(paths)) order.push_back(paths[i].server);
  // Servers with requests but no estimate go last, in id order.
  std::vector<ServerId> extra;
  for (const auto& [srv, n] : requests)
    if (std::find(order.begin(), order.end(), srv) == order.end() &&
        std::find(extra.begin(), extra.end(), srv) == extra.end())
      extra.push_back(srv);
  std::sort(extra.begin(), extra.end());
  order.insert(order.end(), extra.begin(), extra.end());

  for (ServerId s : order) {
    for (int k = count_for(s); k > 0 && next < pending.size(); --k) out.emplace_back(pending[next++], s);
  }
  return out;
}

struct TimeoutAction {
  enum class Kind { Retry, Skip };
  Kind kind = Kind::Skip;
  ServerId server;
  ChunkRecord record;
};

inline TimeoutAction on_timeout(ChunkRecord record, std::span<const PathEstimate> paths, std::uint32_t retry_limit,
                                ServerId timed_out) {
  TimeoutAction act;
  if (record.retries >= retry_limit || paths.empty()) {
    record.state = ChunkState::Skipped;
    act.kind = TimeoutAction::Kind::Skip;
    act.record = record;
    return act;
  }
  std::optional<std::size_t> best;
  for (std::size_t i : by_rate_desc(paths)) {
    if (paths[i].server == timed_out) continue;
    best = i;
    break;
  }
  act.kind = TimeoutAction::Kind::Retry;
  act.server = best ? paths[*best].server : timed_out;
  ++record.retries;
  act.record = record;
  return act;
}

struct ReceiveOutcome {
  ChunkRecord record;
  std::optional<RateSample> sample;
  bool accepted = false;
};

/// First copy wins. Copies arriving for Received or Skipped chunks change
/// nothing and yield no sample.
inline ReceiveOutcome on_receive(ChunkRecord record, SimTime at, ServerId from, SimTime sent_at) {
  ReceiveOutcome out;
  if (record.state != ChunkState::Outstanding) {
    out.record = record;
    return out;
  }
  record.state = ChunkState::Received;
  record.completed_at = at;
  const double elapsed = std::max((at - sent_at).secs(), 1e-6);
  out.sample = RateSample{from, Rate(1.0 / elapsed), at};
  out.record = record;
  out.accepted = true;
  return out;
}

inline ReceiveOutcome on_receive(const ChunkRecord& record, SimTime at) {
  if (record.state == ChunkState::Outstanding && (!record.request_time || !record.assigned_server)) {
    throw std::invalid_argument("on_receive: outstanding chunk without request time");
  }
  if (record.state != ChunkState::Outstanding) return {record, std::nullopt, false};
  return on_receive(record, at, *record.assigned_server, *record.request_time);
}

/// Expected arrival of a request issued at `sent` on a path.
inline SimTime expected_completion(const PathEstimate& p, SimTime sent) {
  const double r = std::max(p.mean_rate.value(), 1e-9);
  return sent + Duration::seconds(std::min(1.0 / r, 1e6));
}

/// Duplicates the head-of-line chunk onto a faster path when its current copy
/// is expected after `deadline` but another server with window room would
/// deliver before it. `room[i]` is the free window on `paths[i]`.
inline std::optional<std::pair<ChunkId, ServerId>> opportunistic_retransmit(
    ChunkId buffer_head, std::span<const ChunkRecord> records, std::span<const PathEstimate> paths,
    std::span<const int> room, SimTime now, SimTime deadline) {
  if (buffer_head.index >= records.size()) return std::nullopt;
  const ChunkRecord& rec = records[buffer_head.index];
  if (rec.state != ChunkState::Outstanding || rec.duplicated || !rec.assigned_server || !rec.request_time) {
    return std::nullopt;
  }
  const PathEstimate* cur = nullptr;
  for (const auto& p : paths)
    if (p.server == *rec.assigned_server) cur = &p;
  if (cur == nullptr) return std::nullopt;
  const SimTime eta = expected_completion(*cur, *rec.request_time);
  if (eta <= deadline) return std::nullopt;
  std::optional<std::size_t> pick;
  SimTime pick_eta = SimTime::max();
  for (std::size_t i : by_rate_desc(paths)) {
    if (paths[i].server == cur->server || i >= room.size() || room[i] <= 0) continue;
    const SimTime alt = expected_completion(paths[i], now);
    if (alt < deadline && alt < pick_eta) {
      pick = i;
      pick_eta = alt;
    }
  }
  if (!pick) return std::nullopt;
  return std::make_pair(buffer_head, paths[*pick].server);
}

}  // namespace mums::transport
