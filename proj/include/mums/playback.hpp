#pragma once

// Client playback model: pre-buffering until a threshold of contiguous chunks
// is available, then one chunk per playback interval. A missing chunk at its
// deadline stalls playback until it is received or skipped; a skipped chunk
// still consumes its interval.

#include <algorithm>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mums/domain.hpp"
#include "mums/transport.hpp"

namespace mums::playback {

using transport::ChunkState;

enum class Phase { PreBuffering, Playing, Stalled, Finished };

struct StallInterval {
  SimTime start;
  SimTime end;
  double secs() const { return (end - start).secs(); }
};

struct PlaybackState {
  Phase phase = Phase::PreBuffering;
  std::uint32_t play_head = 0;
  std::uint32_t buffer_level = 0;
  std::vector<StallInterval> stall_log;
  std::uint32_t skips = 0;

  SimTime session_start{};
  std::optional<SimTime> play_start;
  SimTime next_deadline{};
  SimTime stall_start{};
  std::optional<SimTime> finish_time;
  bool truncated = false;
};

struct QoeReport {
  double stall_fraction = 0.0;
  double mean_stall_duration_s = 0.0;
  std::uint32_t stall_count = 0;
  std::uint32_t skipped_chunks = 0;
  double session_duration_s = 0.0;
  double prebuffer_s = 0.0;
  bool truncated = false;
};

inline PlaybackState start_session(SimTime first_request) {
  PlaybackState s;
  s.session_start = first_request;
  return s;
}

inline std::uint32_t contiguous_available(std::span<const ChunkState> chunks, std::uint32_t from) {
  std::uint32_t n = 0;
  while (from + n < chunks.size() && transport::terminal(chunks[from + n])) ++n;
  return n;
}

/// Advances the player to `now`. Must be called at every chunk deadline and
/// whenever a chunk becomes Received or Skipped.
inline PlaybackState tick(PlaybackState s, SimTime now, Rate playback_rate, std::uint32_t prebuffer_chunks,
                          std::span<const ChunkState> chunks) {
  const auto total = static_cast<std::uint32_t>(chunks.size());
  const Duration interval(static_cast<std::int64_t>(std::llround(1e6 / playback_rate.value())));
  auto available = [&](std::uint32_t i) { return i < total && transport::terminal(chunks[i]); };

  if (s.phase == Phase::Finished) return s;

  if (s.phase == Phase::PreBuffering) {
    const std::uint32_t need = std::min(prebuffer_chunks, total - s.play_head);
    if (contiguous_available(chunks, s.play_head) >= std::max<std::uint32_t>(need, 1) || total == 0) {
      s.phase = Phase::Playing;
      s.play_start = now;
      s.next_deadline = now;
    }
  }

  if (s.phase == Phase::Stalled && available(s.play_head)) {
    s.stall_log.push_back({s.stall_start, now});
    s.phase = Phase::Playing;
    s.next_deadline = now;
  }

  while (s.phase == Phase::Playing && s.next_deadline <= now) {
    if (s.play_head >= total) {
      s.phase = Phase::Finished;
      s.finish_time = s.next_deadline;
      break;
    }
    if (!available(s.play_head)) {
      s.phase = Phase::Stalled;
      s.stall_start = s.next_deadline;
      break;
    }
    if (chunks[s.play_head] == ChunkState::Skipped) ++s.skips;
    ++s.play_head;
    s.next_deadline = s.next_deadline + interval;
  }

  s.buffer_level = contiguous_available(chunks, s.play_head);
  return s;
}

/// Ends an unfinished session at `now` (experiment horizon reached).
inline PlaybackState truncate(PlaybackState s, SimTime now) {
  if (s.phase == Phase::Finished) return s;
  if (s.phase == Phase::Stalled) s.stall_log.push_back({s.stall_start, std::max(now, s.stall_start)});
  if (!s.play_start) s.play_start = now;
  s.phase = Phase::Finished;
  s.finish_time = now;
  s.truncated = true;
  return s;
}

inline QoeReport report(const PlaybackState& s) {
  if (s.phase != Phase::Finished || !s.finish_time) throw std::logic_error("report: session not finished");
  QoeReport r;
  r.session_duration_s = (*s.finish_time - s.session_start).secs();
  double stalled = 0.0;
  for (const auto& st : s.stall_log) stalled += st.secs();
  r.stall_count = static_cast<std::uint32_t>(s.stall_log.size());
  r.mean_stall_duration_s = r.stall_count ? stalled / r.stall_count : 0.0;
  r.stall_fraction = r.session_duration_s > 0.0 ? stalled / r.session_duration_s : 0.0;
  r.skipped_chunks = s.skips;
  r.prebuffer_s = s.play_start ? (*s.play_start - s.session_start).secs() : r.session_duration_s;
  r.truncated = s.truncated;
  return r;
}

}  // namespace mums::playback
