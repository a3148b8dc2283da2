#pragma once

// Per-server bandwidth estimation: smoothed completion rate, its variance,
// Cantelli bounds for the scheduler and a CUBIC-shaped request window whose
// growth depends only on the time since the last congestion event.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mums/domain.hpp"

namespace mums::estimator {

struct CubicParams {
  double c = 0.4;
  /// Fraction of the window removed on a congestion event.
  double beta = 0.7;
};

struct EstimatorConfig {
  double smoothing = 0.2;
  double tail = 0.05;
  /// Relative drop of the smoothed rate that counts as a loss.
  double loss_drop = 0.2;
  CubicParams cubic{};
  double initial_window = 8.0;
  double max_window = 32.0;
};

struct RateBounds {
  Rate lower;
  Rate upper;
};

struct RateSample {
  ServerId server;
  Rate completion_rate;
  SimTime at;
};

struct PathEstimate {
  ServerId server;
  Rate mean_rate{1.0};
  double rate_variance = 0.0;
  Rate upper_rate{1.0};
  Rate lower_rate{1.0};
  double window = 1.0;
  SimTime last_congestion_time{};
  double w_max_at_loss = 1.0;
  /// Highest smoothed rate since the last congestion event; a loss is
  /// registered when the smoothed rate falls more than `loss_drop` below it.
  double reference_rate = 1.0;
  std::uint32_t samples = 0;
  std::uint32_t loss_events = 0;
};

/// One-sided (Cantelli) bounds at the given tail mass.
inline RateBounds chebyshev_bounds(Rate mean, double variance, double tail) {
  if (!(variance >= 0.0) || !(tail > 0.0 && tail < 0.5)) {
    throw std::invalid_argument("chebyshev_bounds: need variance >= 0 and 0 < tail < 0.5");
  }
  const double spread = std::sqrt(variance) * std::sqrt((1.0 - tail) / tail);
  return {Rate(std::max(0.0, mean.value() - spread)), Rate(mean.value() + spread)};
}

/// W(t) = c (t - K)^3 + w_max with K = cbrt(w_max * beta / c), floored at one chunk.
inline double cubic_window(const PathEstimate& est, SimTime now, double c_cubic, double beta) {
  const double t = std::max(0.0, (now - est.last_congestion_time).secs());
  const double k = std::cbrt(est.w_max_at_loss * beta / c_cubic);
  const double d = t - k;
  return std::max(1.0, c_cubic * d * d * d + est.w_max_at_loss);
}

inline PathEstimate make_estimate(ServerId server, Rate prior, SimTime now, const EstimatorConfig& cfg = {}) {
  PathEstimate e;
  e.server = server;
  e.mean_rate = prior;
  e.upper_rate = prior;
  e.lower_rate = prior;
  e.reference_rate = prior.value();
  e.last_congestion_time = now;
  e.w_max_at_loss = std::max(1.0, cfg.initial_window);
  e.window = std::min(cfg.max_window, cubic_window(e, now, cfg.cubic.c, cfg.cubic.beta));
  return e;
}

/// Re-evaluates the window at `now`, capped at the client's maximum.
inline PathEstimate advance_window(PathEstimate est, SimTime now, const EstimatorConfig& cfg = {}) {
  if (now < est.last_congestion_time) return est;
  est.window = std::min(std::max(1.0, cfg.max_window), cubic_window(est, now, cfg.cubic.c, cfg.cubic.beta));
  return est;
}

/// Enters the post-loss regime at `at`: the plateau is the window held at the
/// moment of the loss.
inline PathEstimate register_loss(PathEstimate est, SimTime at, const EstimatorConfig& cfg = {}) {
  est = advance_window(est, at, cfg);
  est.w_max_at_loss = std::max(1.0, est.window);
  est.last_congestion_time = std::max(at, est.last_congestion_time);
  est.window = std::min(cfg.max_window, cubic_window(est, est.last_congestion_time, cfg.cubic.c, cfg.cubic.beta));
  est.reference_rate = est.mean_rate.value();
  ++est.loss_events;
  return est;
}

inline PathEstimate observe(PathEstimate est, const RateSample& sample, const EstimatorConfig& cfg) {
  if (sample.server != est.server) throw std::invalid_argument("observe: sample belongs to another server");
  const double x = sample.completion_rate.value();
  if (!std::isfinite(x) || !(x > 0.0)) throw std::invalid_argument("observe: completion rate must be finite and > 0");
  const double s = cfg.smoothing;
  if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("observe: smoothing must be in (0, 1]");

  const double prev = est.mean_rate.value();
  double mean = x;
  double var = 0.0;
  if (est.samples > 0) {
    const double diff = x - prev;
    const double incr = s * diff;
    mean = prev + incr;
    var = (1.0 - s) * (est.rate_variance + diff * incr);
  }
  est.mean_rate = Rate(mean);
  est.rate_variance = std::max(0.0, var);
  const auto b = chebyshev_bounds(est.mean_rate, est.rate_variance, cfg.tail);
  est.lower_rate = b.lower;
  est.upper_rate = b.upper;
  ++est.samples;

  if (est.samples == 1) {
    est.reference_rate = mean;
    return advance_window(est, sample.at, cfg);
  }
  est.reference_rate = std::max(est.reference_rate, prev);
  if (mean < (1.0 - cfg.loss_drop) * est.reference_rate) {
    return register_loss(est, sample.at, cfg);
  }
  est.reference_rate = std::max(est.reference_rate, mean);
  return advance_window(est, sample.at, cfg);
}

inline PathEstimate observe(const PathEstimate& est, const RateSample& sample, double smoothing) {
  EstimatorConfig cfg;
  cfg.smoothing = smoothing;
  return observe(est, sample, cfg);
}

}  // namespace mums::estimator
