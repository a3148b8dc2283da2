#pragma once

// Peering-cost analytics and server selection.
//
// Cost side: the closed-form q-percentile cost of k symmetric M/G/infinity
// server+link systems, a Monte-Carlo occupancy oracle for it, the 5-minute
// bucket ledger with nearest-rank percentiles, and the peak subadditivity
// check. Selection side: round-robin, k-closest and the semi-online convex
// assignment program.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mums/domain.hpp"
#include "mums/lp.hpp"

namespace mums::costsel {

/// Standard normal quantile: rational initial guess refined by Halley steps on erfc.
inline double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("normal_quantile: q must be in (0,1)");
  // Acklam's approximation.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  double x;
  if (q < 0.02425) {
    const double r = std::sqrt(-2.0 * std::log(q));
    x = (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  } else if (q > 1.0 - 0.02425) {
    const double r = std::sqrt(-2.0 * std::log1p(-q));
    x = -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  } else {
    const double u = q - 0.5, r = u * u;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * u /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  for (int i = 0; i < 2; ++i) {
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - q;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
  }
  return x;
}

/// Two-decimal quantile constant used by the cost model (1.64 at q = 0.95).
inline double quantile_constant(double q) { return std::round(normal_quantile(q) * 100.0) / 100.0; }

struct CostModelParams {
  double arrival_rate = 1.0;  // clients per second
  double video_size = 1.0;    // chunks
  double download_rate = 1.0; // chunks per second
  int servers = 1;
  double percentile = 0.95;

  double rho() const { return arrival_rate * video_size / download_rate; }
  void validate() const {
    if (!(arrival_rate > 0.0 && video_size > 0.0 && download_rate > 0.0 && servers > 0 && percentile > 0.0 &&
          percentile < 1.0)) {
      throw std::invalid_argument("CostModelParams: all parameters must be positive and 0 < q < 1");
    }
  }
};

struct AnalyticCost {
  double cost = 0.0;  // per link
  double rho = 0.0;
  double occupancy_quantile = 0.0;
  /// rho < 25: the normal approximation is rough.
  bool low_load = false;
};

/// (z_q sqrt(rho) + rho) T / k with rho = lambda S / T.
inline AnalyticCost analytic_cost(const CostModelParams& p) {
  p.validate();
  AnalyticCost out;
  out.rho = p.rho();
  out.occupancy_quantile = quantile_constant(p.percentile) * std::sqrt(out.rho) + out.rho;
  out.cost = out.occupancy_quantile * p.download_rate / p.servers;
  out.low_load = out.rho < 25.0;
  return out;
}

/// Nearest-rank percentile of unsorted values: element ceil(q N) (1-based) of the sorted list.
template <class T>
double nearest_rank(std::vector<T> values, double q) {
  if (values.empty()) throw std::invalid_argument("nearest_rank: empty input");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("nearest_rank: q must be in (0,1)");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return static_cast<double>(values[rank - 1]);
}

struct OracleResult {
  double cost = 0.0;
  double occupancy_quantile = 0.0;
  std::size_t samples = 0;
};

/// Poisson(lambda) arrivals, deterministic service S/T, occupancy sampled every
/// `sample_period_s`; returns the empirical q-quantile occupancy scaled by T/k.
inline OracleResult mg_infinity_oracle(const CostModelParams& p, double horizon_s, RngStream rng,
                                       double sample_period_s = 300.0) {
  p.validate();
  const double service = p.video_size / p.download_rate;
  const double first = std::ceil(service / sample_period_s) * sample_period_s;
  std::vector<std::uint32_t> occupancy;
  std::deque<double> active;
  double next_arrival = rng.exponential(1.0 / p.arrival_rate);
  for (double t = std::max(first, sample_period_s); t <= horizon_s; t += sample_period_s) {
    while (next_arrival <= t) {
      active.push_back(next_arrival);
      next_arrival += rng.exponential(1.0 / p.arrival_rate);
    }
    while (!active.empty() && active.front() <= t - service) active.pop_front();
    occupancy.push_back(static_cast<std::uint32_t>(active.size()));
  }
  OracleResult out;
  out.samples = occupancy.size();
  if (occupancy.empty()) return out;
  out.occupancy_quantile = nearest_rank(std::move(occupancy), p.percentile);
  out.cost = out.occupancy_quantile * p.download_rate / p.servers;
  return out;
}

/// Byte volumes of consecutive 5-minute buckets on one peering link.
struct TrafficLedger {
  std::vector<std::uint64_t> buckets;
};

inline double percentile_cost(const TrafficLedger& ledger, double q) {
  if (ledger.buckets.empty()) throw std::invalid_argument("percentile_cost: empty ledger");
  return nearest_rank(ledger.buckets, q);
}

/// max(x1 + x2) <= max(x1) + max(x2).
inline bool peak_subadditivity_check(const TrafficLedger& x1, const TrafficLedger& x2) {
  if (x1.buckets.size() != x2.buckets.size()) throw std::invalid_argument("peak_subadditivity_check: size mismatch");
  if (x1.buckets.empty()) return true;
  std::uint64_t peak_sum = 0;
  for (std::size_t i = 0; i < x1.buckets.size(); ++i) peak_sum = std::max(peak_sum, x1.buckets[i] + x2.buckets[i]);
  const auto m1 = *std::max_element(x1.buckets.begin(), x1.buckets.end());
  const auto m2 = *std::max_element(x2.buckets.begin(), x2.buckets.end());
  return peak_sum <= m1 + m2;
}

/// Same relation for the q-percentile; not guaranteed, reported as a statistic.
inline bool percentile_subadditive(const TrafficLedger& x1, const TrafficLedger& x2, double q) {
  if (x1.buckets.size() != x2.buckets.size()) throw std::invalid_argument("percentile_subadditive: size mismatch");
  TrafficLedger sum;
  for (std::size_t i = 0; i < x1.buckets.size(); ++i) sum.buckets.push_back(x1.buckets[i] + x2.buckets[i]);
  return percentile_cost(sum, q) <= percentile_cost(x1, q) + percentile_cost(x2, q);
}

inline std::vector<ServerId> select_round_robin(std::uint32_t& counter, std::uint32_t k, std::uint32_t n_servers) {
  if (n_servers == 0 || k > n_servers) throw std::invalid_argument("select_round_robin: need k <= n_servers");
  std::vector<ServerId> out;
  for (std::uint32_t i = 0; i < k; ++i) out.push_back(ServerId{(counter + i) % n_servers});
  counter = (counter + k) % n_servers;
  return out;
}

inline std::vector<ServerId> select_k_closest(std::vector<std::pair<ServerId, Duration>> rtts, std::size_t k) {
  if (k > rtts.size()) throw std::invalid_argument("select_k_closest: k exceeds server count");
  std::stable_sort(rtts.begin(), rtts.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  std::vector<ServerId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(rtts[i].first);
  return out;
}

// ---------------------------------------------------------------------------
// Semi-online assignment program.

struct Region {
  double expected_arrivals = 0.0;  // m_i
  double target = 1.0;             // T_i, chunks/s
  std::vector<double> rate;        // R_ij per link
  std::vector<double> variance;    // Var(R_ij) per link
};

struct LinkState {
  double current_p95 = 0.0;   // F_j (chunks/s)
  double current_load = 0.0;  // L_j (chunks/s)
  double capacity = 1e18;     // C_j (chunks/s)
};

enum class ExcessObjective { Sum, Max };

struct SelectionProblem {
  std::vector<Region> regions;
  std::vector<LinkState> links;
  double w_max = 1.0;
  double gamma = 1.0;
  ExcessObjective objective = ExcessObjective::Sum;
};

using Matrix = std::vector<std::vector<double>>;

/// Q_i with Q_jj = Var(R_j) + R_j^2 and Q_jl = R_j R_l.
inline Matrix q_matrix(const Region& r) {
  const std::size_t n = r.rate.size();
  Matrix q(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) q[a][b] = r.rate[a] * r.rate[b] + (a == b ? r.variance[a] : 0.0);
  return q;
}

/// alpha' Q alpha + b' alpha + T^2 - gamma^2 with b = -2 T R.
inline double variance_slack(const Region& r, std::span<const double> alpha, double gamma) {
  double mean = 0.0, var = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    mean += alpha[j] * r.rate[j];
    var += alpha[j] * alpha[j] * r.variance[j];
  }
  return var + (mean - r.target) * (mean - r.target) - gamma * gamma;
}

struct Selection {
  bool feasible = false;
  Matrix alpha;                 // [region][link]
  double objective = 0.0;       // summed (or max) positive excess over F_j
  std::vector<double> link_load;  // B_j
  int iterations = 0;

  std::vector<ServerId> servers_for(std::size_t region, double threshold = 1e-6) const {
    std::vector<ServerId> out;
    for (std::size_t j = 0; j < alpha[region].size(); ++j)
      if (alpha[region][j] > threshold) out.push_back(ServerId{static_cast<std::uint32_t>(j)});
    return out;
  }
};

inline std::vector<double> induced_load(const SelectionProblem& p, const Matrix& alpha) {
  std::vector<double> b(p.links.size(), 0.0);
  for (std::size_t i = 0; i < p.regions.size(); ++i)
    for (std::size_t j = 0; j < p.links.size(); ++j)
      b[j] += p.regions[i].expected_arrivals * alpha[i][j] * p.regions[i].rate[j];
  return b;
}

inline double excess_objective(const SelectionProblem& p, const Matrix& alpha) {
  const auto b = induced_load(p, alpha);
  double sum = 0.0, mx = 0.0;
  for (std::size_t j = 0; j < p.links.size(); ++j) {
    const double e = std::max(0.0, b[j] + p.links[j].current_load - p.links[j].current_p95);
    sum += e;
    mx = std::max(mx, e);
  }
  return p.objective == ExcessObjective::Sum ? sum : mx;
}

/// Largest violation over every constraint family (0 when feasible).
inline double selection_residual(const SelectionProblem& p, const Matrix& alpha) {
  double worst = 0.0;
  for (std::size_t i = 0; i < p.regions.size(); ++i) {
    const auto& r = p.regions[i];
    double rate = 0.0;
    for (std::size_t j = 0; j < p.links.size(); ++j) {
      worst = std::max({worst, -alpha[i][j], alpha[i][j] - p.w_max});
      rate += alpha[i][j] * r.rate[j];
    }
    worst = std::max(worst, r.target - rate);
    worst = std::max(worst, variance_slack(r, alpha[i], p.gamma));
  }
  const auto b = induced_load(p, alpha);
  for (std::size_t j = 0; j < p.links.size(); ++j)
    worst = std::max(worst, b[j] + p.links[j].current_load - p.links[j].capacity);
  return worst;
}

namespace detail {

// Column layout: alpha (I*J, row-major by region), then the epigraph column(s).
struct CutModel {
  const SelectionProblem& p;
  std::size_t I, J, nalpha, nvar;
  std::vector<std::vector<double>> a;
  std::vector<double> b;

  explicit CutModel(const SelectionProblem& prob, std::size_t extra)
      : p(prob), I(prob.regions.size()), J(prob.links.size()), nalpha(I * J), nvar(I * J + extra) {
    for (std::size_t i = 0; i < I; ++i) {
      auto row = blank();
      for (std::size_t j = 0; j < J; ++j) row[i * J + j] = -p.regions[i].rate[j];
      add(row, -p.regions[i].target);
      for (std::size_t j = 0; j < J; ++j) {
        auto box = blank();
        box[i * J + j] = 1.0;
        add(box, p.w_max);
      }
    }
    for (std::size_t j = 0; j < J; ++j) {
      auto row = blank();
      for (std::size_t i = 0; i < I; ++i) row[i * J + j] = p.regions[i].expected_arrivals * p.regions[i].rate[j];
      add(row, p.links[j].capacity - p.links[j].current_load);
    }
  }

  std::vector<double> blank() const { return std::vector<double>(nvar, 0.0); }
  void add(std::vector<double> row, double rhs) {
    a.push_back(std::move(row));
    b.push_back(rhs);
  }

  // Tangent of region i's variance constraint at x, optionally against column `z`.
  void add_cut(std::size_t i, std::span<const double> x, std::optional<std::size_t> z) {
    const auto& r = p.regions[i];
    std::vector<double> al(J);
    for (std::size_t j = 0; j < J; ++j) al[j] = x[i * J + j];
    const double g = variance_slack(r, al, p.gamma);
    double mean = 0.0;
    for (std::size_t j = 0; j < J; ++j) mean += al[j] * r.rate[j];
    auto row = blank();
    double dot = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const double grad = 2.0 * al[j] * r.variance[j] + 2.0 * (mean - r.target) * r.rate[j];
      row[i * J + j] = grad;
      dot += grad * al[j];
    }
    if (z) row[*z] = -1.0;
    add(std::move(row), dot - g);
  }
};

inline Matrix unpack(const SelectionProblem& p, std::span<const double> x) {
  const std::size_t I = p.regions.size(), J = p.links.size();
  Matrix m(I, std::vector<double>(J, 0.0));
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t j = 0; j < J; ++j) m[i][j] = std::clamp(x[i * J + j], 0.0, p.w_max);
  return m;
}

inline double max_slack(const SelectionProblem& p, const Matrix& alpha) {
  double worst = -1e300;
  for (std::size_t i = 0; i < p.regions.size(); ++i)
    worst = std::max(worst, variance_slack(p.regions[i], alpha[i], p.gamma));
  return worst;
}

// Kelley cutting planes on  min z  s.t. variance_slack_i <= z, linear constraints.
// Returns a point with every variance constraint strictly slack, or nullopt.
inline std::optional<Matrix> interior_point(const SelectionProblem& p, int max_iter) {
  CutModel m(p, 1);
  const std::size_t z = m.nalpha;
  // The LP column holds z + gamma^2, which is non-negative because every
  // variance slack is at least -gamma^2. Cuts: grad.x - z' <= grad.x0 - g(x0) - gamma^2.
  const double shift = p.gamma * p.gamma;
  std::vector<double> c = m.blank();
  c[z] = -1.0;
  for (int it = 0; it < max_iter; ++it) {
    const auto res = lp::maximize(m.a, m.b, c);
    if (res.status != lp::Status::Optimal) return std::nullopt;
    const Matrix alpha = unpack(p, res.x);
    const double lower = res.x[z] - shift;
    if (lower >= -1e-12 * std::max(1.0, shift)) return std::nullopt;
    if (max_slack(p, alpha) < -1e-9 * std::max(1.0, shift)) return alpha;
    for (std::size_t i = 0; i < p.regions.size(); ++i) {
      m.add_cut(i, res.x, z);
      m.b.back() -= shift;
    }
  }
  return std::nullopt;
}

}  // namespace detail

struct SelectOptions {
  double sparsity_weight = 1e-7;
  double gap_tolerance = 1e-9;
  int max_iterations = 400;
  /// Weight of the strictly feasible point blended into the first-stage
  /// optimum when starting the margin-spreading stage.
  double blend = 1e-6;
  bool spread_margin = true;
};

namespace detail {

struct CutResult {
  Matrix alpha;
  int iterations = 0;
};

// Supporting-hyperplane outer approximation of  max c.x  over the linear rows
// of `m` and the variance constraints. Every iterate of the cut LP is pulled
// back to the variance boundary along the segment from the strictly feasible
// x0, so the returned allocation is always feasible. `total` scores a
// candidate (lower is better) and must agree with -c.x on LP points.
template <class Score>
CutResult solve_cuts(const SelectionProblem& p, CutModel& m, const std::vector<double>& c, const Matrix& x0,
                     Score total, const SelectOptions& opt) {
  const std::size_t I = p.regions.size(), J = p.links.size();
  CutResult out{x0, 0};
  double best_val = total(x0);
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const auto res = lp::maximize(m.a, m.b, c);
    if (res.status != lp::Status::Optimal) break;
    const double lower = -res.value;
    Matrix cand = unpack(p, res.x);
    if (max_slack(p, cand) <= 0.0) {
      out.alpha = cand;
      ++it;
      break;
    }
    // Largest step from x0 towards the LP point that keeps every region feasible.
    double step = 1.0;
    for (std::size_t i = 0; i < I; ++i) {
      std::vector<double> d(J), base(J);
      for (std::size_t j = 0; j < J; ++j) {
        base[j] = x0[i][j];
        d[j] = cand[i][j] - x0[i][j];
      }
      const auto& r = p.regions[i];
      double qa = 0.0, mb = 0.0, md = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        qa += d[j] * d[j] * r.variance[j];
        mb += base[j] * r.rate[j];
        md += d[j] * r.rate[j];
      }
      qa += md * md;
      double qb = 2.0 * (mb - r.target) * md;
      for (std::size_t j = 0; j < J; ++j) qb += 2.0 * base[j] * d[j] * r.variance[j];
      const double qc = variance_slack(r, base, p.gamma);
      if (qa + qb + qc <= 0.0) continue;
      double root;
      if (qa > 1e-300) {
        root = (-qb + std::sqrt(std::max(0.0, qb * qb - 4.0 * qa * qc))) / (2.0 * qa);
      } else {
        root = qb > 0.0 ? -qc / qb : 1.0;
      }
      step = std::min(step, std::clamp(root, 0.0, 1.0));
    }
    Matrix y(I, std::vector<double>(J));
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) y[i][j] = x0[i][j] + step * (cand[i][j] - x0[i][j]);
    const double val = total(y);
    if (val < best_val) {
      out.alpha = y;
      best_val = val;
    }
    if (best_val - lower <= opt.gap_tolerance * std::max(1.0, std::fabs(best_val))) {
      ++it;
      break;
    }
    std::vector<double> flat(m.nvar, 0.0);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) flat[i * J + j] = y[i][j];
    for (std::size_t i = 0; i < I; ++i)
      if (variance_slack(p.regions[i], y[i], p.gamma) > -1e-9 * std::max(1.0, p.gamma * p.gamma))
        m.add_cut(i, flat, std::nullopt);
  }
  out.iterations = it;
  return out;
}

inline double alpha_sum(const Matrix& a) {
  double s = 0.0;
  for (const auto& row : a)
    for (double v : row) s += v;
  return s;
}

// Rows  sum_i m_i R_ij alpha_ij - col <= rhs_j  for every link.
inline void add_load_rows(CutModel& m, std::size_t col, bool shared_col, const std::vector<double>& rhs) {
  const auto& p = m.p;
  for (std::size_t j = 0; j < m.J; ++j) {
    auto row = m.blank();
    for (std::size_t i = 0; i < m.I; ++i) row[i * m.J + j] = p.regions[i].expected_arrivals * p.regions[i].rate[j];
    row[col + (shared_col ? 0 : j)] = -1.0;
    m.add(row, rhs[j]);
  }
}

}  // namespace detail

/// Minimizes the summed (or maximal) positive excess of induced load over each
/// link's current p95 mark subject to the rate, window, variance and capacity
/// constraints. Optima are rarely unique (any allocation under every mark
/// scores zero), so a second stage holds the excess at its optimum and
/// minimizes the largest load-minus-mark margin, which spreads new load over
/// the links with the most headroom instead of an arbitrary vertex.
inline Selection select_optimized(const SelectionProblem& p, const SelectOptions& opt = {}) {
  const std::size_t I = p.regions.size(), J = p.links.size();
  for (const auto& r : p.regions)
    if (r.rate.size() != J || r.variance.size() != J) throw std::invalid_argument("select_optimized: shape mismatch");
  Selection out;
  if (I == 0 || J == 0) {
    out.feasible = true;
    out.alpha.assign(I, std::vector<double>(J, 0.0));
    out.link_load.assign(J, 0.0);
    return out;
  }

  const auto inner = detail::interior_point(p, opt.max_iterations);
  if (!inner) return out;
  const Matrix& x0 = *inner;

  const bool sum = p.objective == ExcessObjective::Sum;
  const std::size_t extra = sum ? J : 1;
  std::vector<double> headroom(J);
  for (std::size_t j = 0; j < J; ++j) headroom[j] = p.links[j].current_p95 - p.links[j].current_load;

  detail::CutModel m(p, extra);
  const std::size_t s0 = m.nalpha;
  detail::add_load_rows(m, s0, !sum, headroom);
  std::vector<double> c = m.blank();
  for (std::size_t k = 0; k < extra; ++k) c[s0 + k] = -1.0;
  for (std::size_t v = 0; v < m.nalpha; ++v) c[v] = -opt.sparsity_weight;
  auto stage1 = detail::solve_cuts(
      p, m, c, x0, [&](const Matrix& a) { return excess_objective(p, a) + opt.sparsity_weight * detail::alpha_sum(a); },
      opt);
  int iterations = stage1.iterations;
  Matrix best = std::move(stage1.alpha);

  if (opt.spread_margin) {
    // Strictly feasible start with excess no worse than the blend of the two.
    Matrix start(I, std::vector<double>(J));
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) start[i][j] = (1.0 - opt.blend) * best[i][j] + opt.blend * x0[i][j];
    const double bound = excess_objective(p, start) + 1e-9 * std::max(1.0, excess_objective(p, start));

    // Columns: alpha, excess epigraph, shifted margin u' = u + H >= 0.
    detail::CutModel m2(p, extra + 1);
    detail::add_load_rows(m2, s0, !sum, headroom);
    auto cap = m2.blank();
    for (std::size_t k = 0; k < extra; ++k) cap[s0 + k] = 1.0;
    m2.add(cap, bound);
    const double H = std::max(0.0, *std::max_element(headroom.begin(), headroom.end()));
    std::vector<double> shifted(J);
    for (std::size_t j = 0; j < J; ++j) shifted[j] = headroom[j] - H;
    detail::add_load_rows(m2, s0 + extra, true, shifted);
    std::vector<double> c2 = m2.blank();
    c2[s0 + extra] = -1.0;
    for (std::size_t v = 0; v < m2.nalpha; ++v) c2[v] = -opt.sparsity_weight;
    auto margin = [&](const Matrix& a) {
      const auto b = induced_load(p, a);
      double u = -1e300;
      for (std::size_t j = 0; j < J; ++j) u = std::max(u, b[j] - headroom[j]);
      return u + H + opt.sparsity_weight * detail::alpha_sum(a);
    };
    auto stage2 = detail::solve_cuts(p, m2, c2, start, margin, opt);
    iterations += stage2.iterations;
    if (excess_objective(p, stage2.alpha) <= bound + 1e-9) best = std::move(stage2.alpha);
  }

  for (auto& row : best)
    for (double& v : row)
      if (v < 1e-12) v = 0.0;
  out.feasible = true;
  out.alpha = best;
  out.objective = excess_objective(p, best);
  out.link_load = induced_load(p, best);
  out.iterations = iterations;
  return out;
}

}  // namespace mums::costsel
