#pragma once

// Experiment configuration shared by the simulator and the harness.

#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mums/domain.hpp"

namespace mums {

enum class Scenario { Performance, Cost };
enum class SchedulerKind { SunStar, MinRtt, SingleServer, Aggressive };
enum class SelectionKind { RoundRobin, KClosest, Optimized };
enum class CapacityProfile { Medium, High };
enum class VariationMode { Smooth, Abrupt, Fixed };
enum class Topology { Dedicated, GroupShared };

struct ExperimentConfig {
  Scenario scenario = Scenario::Performance;
  std::uint32_t n_servers = 3;
  std::uint32_t servers_per_client = 2;
  SchedulerKind scheduler = SchedulerKind::SunStar;
  SelectionKind selection = SelectionKind::RoundRobin;
  CapacityProfile capacity = CapacityProfile::Medium;
  VariationMode variation = VariationMode::Smooth;
  /// Link bandwidth as a multiple of the per-client mean when variation is Fixed.
  double fixed_bandwidth_factor = 1.0;
  Topology topology = Topology::Dedicated;
  std::uint32_t group_size = 10;
  std::uint32_t clients_concurrent = 20;
  bool churn = false;
  double arrival_spread_s = 10.0;

  std::vector<double> video_durations_min{5, 10, 20, 30, 60};
  /// Empty means weights proportional to 1/duration.
  std::vector<double> video_weights;
  /// When non-zero every video has exactly this many chunks.
  std::uint32_t video_chunks = 0;
  double playback_rate = 2.0;  // chunks per second
  std::uint64_t chunk_size = 250'000;

  double target_factor = 1.1;
  double epoch_s = 1.0;
  std::uint32_t prebuffer_chunks = 8;
  /// Requested-but-unplayed chunk cap; 0 means no cap (fill at network speed).
  std::uint32_t max_buffer_chunks = 0;
  std::uint32_t retry_limit = 3;
  double min_rto_ms = 200.0;
  double initial_rto_ms = 3000.0;
  bool opportunistic_retransmit = true;

  double smoothing = 0.2;
  double initial_window = 4.0;
  double max_window = 4.0;

  double prop_delay_min_ms = 10.0;
  double prop_delay_max_ms = 50.0;
  std::uint32_t queue_packets = 50;
  std::uint32_t packets_per_chunk = 10;

  double gamma_factor = 0.25;
  double selection_period_s = 300.0;
  bool selection_max_objective = false;

  double horizon_s = 14400.0;
  std::uint32_t repetitions = 10;
  std::uint64_t seed = 1;
  std::string trace_path;

  double capacity_factor() const { return capacity == CapacityProfile::High ? 1.5 : 1.0; }
  std::uint32_t effective_k() const { return scheduler == SchedulerKind::SingleServer ? 1 : servers_per_client; }
  double target_rate() const { return playback_rate * target_factor; }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw std::invalid_argument(field + ": " + why);
    };
    if (n_servers == 0) fail("n_servers", "must be positive");
    if (servers_per_client == 0 || servers_per_client > n_servers) fail("servers_per_client", "need 1 <= k <= n_servers");
    if (repetitions == 0) fail("repetitions", "must be >= 1");
    if (!(playback_rate > 0.0)) fail("playback_rate", "must be positive");
    if (chunk_size == 0) fail("chunk_size", "must be positive");
    if (!(target_factor >= 1.0)) fail("target_factor", "target rate must be at least the playback rate");
    if (!(epoch_s > 0.0)) fail("epoch_s", "must be positive");
    if (!(horizon_s > 0.0)) fail("horizon_s", "must be positive");
    if (video_chunks == 0 && video_durations_min.empty()) fail("video_durations_min", "empty");
    for (double d : video_durations_min)
      if (!(d > 0.0)) fail("video_durations_min", "durations must be positive");
    if (!video_weights.empty() && video_weights.size() != video_durations_min.size())
      fail("video_weights", "must match video_durations_min");
    for (double w : video_weights)
      if (!(w > 0.0)) fail("video_weights", "weights must be positive");
    if (group_size == 0) fail("group_size", "must be positive");
    if (!(prop_delay_min_ms >= 0.0 && prop_delay_max_ms >= prop_delay_min_ms)) fail("prop_delay", "bad range");
    if (queue_packets < packets_per_chunk || packets_per_chunk == 0) fail("queue_packets", "must hold one chunk");
    if (!(smoothing > 0.0 && smoothing <= 1.0)) fail("smoothing", "must be in (0,1]");
    if (!(max_window >= 1.0 && initial_window >= 1.0)) fail("max_window", "windows must be >= 1");
    if (!(fixed_bandwidth_factor > 0.0)) fail("fixed_bandwidth_factor", "must be positive");
    if (!(gamma_factor > 0.0)) fail("gamma_factor", "must be positive");
  }
};

/// Samples a video duration (minutes) with the given weights, or weights
/// proportional to 1/duration when `weights` is empty.
inline double sample_duration_min(RngStream& rng, std::span<const double> durations_min,
                                  std::span<const double> weights = {}) {
  if (durations_min.empty()) throw std::invalid_argument("video_choice: no durations");
  std::vector<double> w;
  for (std::size_t i = 0; i < durations_min.size(); ++i) w.push_back(weights.empty() ? 1.0 / durations_min[i] : weights[i]);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return durations_min[i];
    u -= w[i];
  }
  return durations_min.back();
}

inline VideoSpec video_choice(RngStream& rng, const ExperimentConfig& cfg, std::uint64_t video_id) {
  const Rate rate(cfg.playback_rate);
  if (cfg.video_chunks > 0) {
    return make_video(video_id, cfg.video_chunks / cfg.playback_rate, rate, cfg.chunk_size);
  }
  const double minutes = sample_duration_min(rng, cfg.video_durations_min, cfg.video_weights);
  return make_video(video_id, minutes * 60.0, rate, cfg.chunk_size);
}

}  // namespace mums
