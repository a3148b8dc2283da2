#pragma once

// Shared vocabulary: simulated time, rates, chunk/server identifiers, video
// descriptions and the deterministic random stream used by every module.

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mums {

/// Signed span of simulated time in integer microseconds.
class Duration {
 public:
  constexpr Duration() = default;
  constexpr explicit Duration(std::int64_t us) : us_(us) {}

  static constexpr Duration micros(std::int64_t us) { return Duration(us); }
  static constexpr Duration millis(std::int64_t ms) { return Duration(ms * 1000); }
  static Duration seconds(double s) {
    if (!std::isfinite(s) || std::fabs(s) > 9.2e12) {
      throw std::overflow_error("Duration::seconds: out of range");
    }
    return Duration(static_cast<std::int64_t>(std::llround(s * 1e6)));
  }

  constexpr std::int64_t us() const { return us_; }
  constexpr double secs() const { return static_cast<double>(us_) * 1e-6; }

  friend Duration operator+(Duration a, Duration b) {
    std::int64_t r;
    if (__builtin_add_overflow(a.us_, b.us_, &r)) throw std::overflow_error("Duration overflow");
    return Duration(r);
  }
  friend Duration operator-(Duration a, Duration b) {
    std::int64_t r;
    if (__builtin_sub_overflow(a.us_, b.us_, &r)) throw std::overflow_error("Duration overflow");
    return Duration(r);
  }
  friend Duration operator*(Duration a, std::int64_t k) {
    std::int64_t r;
    if (__builtin_mul_overflow(a.us_, k, &r)) throw std::overflow_error("Duration overflow");
    return Duration(r);
  }
  friend constexpr auto operator<=>(Duration, Duration) = default;

 private:
  std::int64_t us_ = 0;
};

/// Microseconds since simulation start. Never negative; arithmetic is
/// overflow-checked and throws instead of wrapping.
class SimTime {
 public:
  constexpr SimTime() = default;
  explicit SimTime(std::int64_t ticks) : ticks_(ticks) {
    if (ticks < 0) throw std::out_of_range("SimTime: negative tick count");
  }

  static SimTime from_seconds(double s) { return SimTime(Duration::seconds(s).us()); }
  static constexpr SimTime max() {
    SimTime t;
    t.ticks_ = std::numeric_limits<std::int64_t>::max();
    return t;
  }

  constexpr std::int64_t ticks() const { return ticks_; }
  constexpr double secs() const { return static_cast<double>(ticks_) * 1e-6; }

  friend SimTime operator+(SimTime t, Duration d) {
    std::int64_t r;
    if (__builtin_add_overflow(t.ticks_, d.us(), &r)) throw std::overflow_error("SimTime overflow");
    return SimTime(r);
  }
  friend SimTime operator-(SimTime t, Duration d) {
    std::int64_t r;
    if (__builtin_sub_overflow(t.ticks_, d.us(), &r)) throw std::overflow_error("SimTime overflow");
    return SimTime(r);
  }
  friend Duration operator-(SimTime a, SimTime b) { return Duration(a.ticks_) - Duration(b.ticks_); }
  friend constexpr auto operator<=>(SimTime, SimTime) = default;

 private:
  std::int64_t ticks_ = 0;
};

/// Chunks per second. Finite and non-negative.
class Rate {
 public:
  constexpr Rate() = default;
  explicit Rate(double v) : v_(v) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("Rate must be finite and >= 0");
  }
  constexpr double value() const { return v_; }
  friend constexpr auto operator<=>(Rate, Rate) = default;

 private:
  double v_ = 0.0;
};

struct ServerId {
  std::uint32_t id = 0;
  friend constexpr auto operator<=>(ServerId, ServerId) = default;
};

struct ChunkId {
  std::uint64_t video_id = 0;
  std::uint32_t index = 0;
  friend constexpr auto operator<=>(const ChunkId&, const ChunkId&) = default;
};

/// Fixed-size chunked video. Only the request count adapts, never the chunk size.
struct VideoSpec {
  std::uint64_t video_id = 0;
  std::uint32_t total_chunks = 1;
  std::uint64_t chunk_size = 1;
  Rate playback_rate{1.0};
  double duration_s = 1.0;

  /// Playback time of one chunk, rounded to whole microseconds.
  Duration chunk_interval() const {
    return Duration(static_cast<std::int64_t>(std::llround(1e6 / playback_rate.value())));
  }
};

inline VideoSpec make_video(std::uint64_t video_id, double duration_s, Rate playback_rate,
                            std::uint64_t chunk_size) {
  if (!(duration_s > 0.0) || !(playback_rate.value() > 0.0) || chunk_size == 0) {
    throw std::invalid_argument("make_video: duration, rate and chunk size must be positive");
  }
  VideoSpec v;
  v.video_id = video_id;
  v.total_chunks = static_cast<std::uint32_t>(std::max(1.0, std::ceil(duration_s * playback_rate.value() - 1e-9)));
  v.chunk_size = chunk_size;
  v.playback_rate = playback_rate;
  v.duration_s = duration_s;
  return v;
}

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based SplitMix64 stream keyed by (seed, stream_id).
///
/// Draw k of a stream is mix(key + (k + 1) * golden), so the sequence depends
/// only on the key and is identical on every platform. Distribution sampling
/// is done in-house (no <random> distributions) for the same reason.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), key_(detail::mix64(seed ^ detail::mix64(stream_id + detail::kGolden))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t draws() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform in [0, n).
  std::uint64_t index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }
  double exponential(double mean) { return -mean * std::log1p(-uniform()); }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Child stream for `label`. Deterministic in (parent key, label) and
/// independent of how many draws the parent has made.
inline RngStream rng_split(const RngStream& parent, std::uint64_t label) {
  const std::uint64_t child = detail::mix64(parent.stream_id() * 0xD1B54A32D192ED03ULL + detail::mix64(label + 1));
  return RngStream(parent.seed(), child);
}

inline std::string to_string(ServerId s) { return std::to_string(s.id); }

}  // namespace mums
