#pragma once

// Brute-force reference solutions used by the unit tests, the acceptance
// binary and `mums-lab selftest`. None of these call into the simplex or the
// cutting-plane solver; they exist to catch mistakes in those.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "mums/costsel.hpp"
#include "mums/domain.hpp"
#include "mums/estimator.hpp"

namespace oracles {

using mums::RngStream;

// ---------------------------------------------------------------------------
// Allocation LP

struct LpInstance {
  std::vector<double> mean, upper, lower, window;
  double target = 0.0;
  std::size_t size() const { return mean.size(); }
};

/// Smallest deviation t needed by a fixed allocation, or +inf when the rate
/// or window constraints fail.
inline double deviation_of(const LpInstance& in, const std::vector<double>& a, double tol = 1e-9) {
  double rate = 0.0, up = 0.0, lo = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (a[i] < -tol || a[i] > in.window[i] + tol) return std::numeric_limits<double>::infinity();
    rate += a[i] * in.mean[i];
    up += a[i] * in.upper[i];
    lo += a[i] * in.lower[i];
  }
  if (rate < in.target - tol * std::max(1.0, in.target)) return std::numeric_limits<double>::infinity();
  return std::max({0.0, up - in.target, in.target - lo});
}

// Gaussian elimination with partial pivoting; nullopt when singular.
inline std::optional<std::vector<double>> solve_square(std::vector<std::vector<double>> m, std::vector<double> rhs) {
  const std::size_t n = rhs.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(m[r][c]) > std::fabs(m[piv][c])) piv = r;
    if (std::fabs(m[piv][c]) < 1e-12) return std::nullopt;
    std::swap(m[piv], m[c]);
    std::swap(rhs[piv], rhs[c]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = m[r][c] / m[c][c];
      for (std::size_t k = c; k < n; ++k) m[r][k] -= f * m[c][k];
      rhs[r] -= f * rhs[c];
    }
  }
  for (std::size_t i = 0; i < n; ++i) rhs[i] /= m[i][i];
  return rhs;
}

/// Exact optimum by enumerating every vertex of the (alpha, t) polytope:
/// each choice of n+1 active constraints out of the 2n+3 is solved and kept
/// if feasible. Returns nullopt when no vertex is feasible.
inline std::optional<double> lp_vertex_optimum(const LpInstance& in) {
  const std::size_t n = in.size(), nv = n + 1;
  std::vector<std::vector<double>> rows;
  std::vector<double> rhs;
  auto add = [&](std::vector<double> r, double b) {
    rows.push_back(std::move(r));
    rhs.push_back(b);
  };
  {
    std::vector<double> r(nv, 0.0), u(nv, 0.0), l(nv, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = in.mean[i];
      u[i] = in.upper[i];
      l[i] = in.lower[i];
    }
    u[n] = -1.0;
    l[n] = 1.0;
    add(r, in.target);  // rate = T
    add(u, in.target);  // upper = T + t
    add(l, in.target);  // lower = T - t
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(nv, 0.0);
    e[i] = 1.0;
    add(e, 0.0);
    add(e, in.window[i]);
  }
  const std::size_t m = rows.size();
  std::optional<double> best;
  // Iterate over all nv-subsets of m rows.
  std::vector<bool> sel(m, false);
  std::fill(sel.begin(), sel.begin() + static_cast<std::ptrdiff_t>(nv), true);
  do {
    std::vector<std::vector<double>> a;
    std::vector<double> b;
    for (std::size_t r = 0; r < m; ++r)
      if (sel[r]) {
        a.push_back(rows[r]);
        b.push_back(rhs[r]);
      }
    const auto x = solve_square(a, b);
    if (!x) continue;
    std::vector<double> alpha(x->begin(), x->begin() + static_cast<std::ptrdiff_t>(n));
    const double need = deviation_of(in, alpha, 1e-9);
    if (!std::isfinite(need)) continue;
    // The vertex's own t must be feasible too; the minimal t for its alpha
    // is never worse, so use that.
    if (!best || need < *best) best = need;
  } while (std::prev_permutation(sel.begin(), sel.end()));
  return best;
}

/// Grid oracle for two servers: alpha_1 on a grid of the given step, the
/// best alpha_2 for each grid point found exactly (t is piecewise linear in
/// alpha_2, so only the breakpoints matter), then a ternary refinement of
/// the best grid cell. Partial minimization keeps t convex in alpha_1.
inline std::optional<double> lp_grid_optimum_2(const LpInstance& in, double step = 1e-3) {
  if (in.size() != 2) return std::nullopt;
  const double T = in.target;
  auto inner = [&](double a1) {
    double best = std::numeric_limits<double>::infinity();
    const double lo_rate = in.mean[1] > 0 ? (T - a1 * in.mean[0]) / in.mean[1] : 0.0;
    std::vector<double> cands{0.0, in.window[1], lo_rate};
    // Where upper - T = T - lower, and where each branch of t crosses zero.
    const double du = in.upper[1] + in.lower[1];
    if (du > 0) cands.push_back((2 * T - a1 * (in.upper[0] + in.lower[0])) / du);
    if (in.upper[1] > 0) cands.push_back((T - a1 * in.upper[0]) / in.upper[1]);
    if (in.lower[1] > 0) cands.push_back((T - a1 * in.lower[0]) / in.lower[1]);
    const double lo = std::max(0.0, lo_rate);
    for (double c : cands) {
      const double a2 = std::clamp(c, lo, in.window[1]);
      best = std::min(best, deviation_of(in, {a1, a2}, 1e-9));
    }
    return best;
  };
  double best = std::numeric_limits<double>::infinity(), arg = 0.0;
  const auto steps = static_cast<long>(std::floor(in.window[0] / step + 1e-9));
  for (long k = 0; k <= steps + 1; ++k) {
    const double a1 = std::min(in.window[0], k * step);
    const double v = inner(a1);
    if (v < best) {
      best = v;
      arg = a1;
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  double lo = std::max(0.0, arg - step), hi = std::min(in.window[0], arg + step);
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    if (inner(m1) <= inner(m2))
      hi = m2;
    else
      lo = m1;
  }
  return std::min(best, inner(0.5 * (lo + hi)));
}

/// Random instance in the acceptance ranges.
inline LpInstance random_lp(RngStream& rng, std::size_t servers) {
  LpInstance in;
  for (std::size_t i = 0; i < servers; ++i) {
    const double r = rng.uniform(1.0, 20.0);
    const double spread = rng.uniform(0.0, 0.5) * r;
    in.mean.push_back(r);
    in.upper.push_back(r + spread * rng.uniform());
    in.lower.push_back(std::max(0.0, r - spread * rng.uniform()));
    in.window.push_back(rng.uniform(1.0, 10.0));
  }
  in.target = rng.uniform(5.0, 40.0);
  return in;
}

inline std::vector<mums::estimator::PathEstimate> to_paths(const LpInstance& in) {
  std::vector<mums::estimator::PathEstimate> out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    mums::estimator::PathEstimate p;
    p.server = mums::ServerId{static_cast<std::uint32_t>(i)};
    p.mean_rate = mums::Rate(in.mean[i]);
    p.upper_rate = mums::Rate(in.upper[i]);
    p.lower_rate = mums::Rate(in.lower[i]);
    p.window = in.window[i];
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Server selection (two regions, two links)

/// Smallest feasible alpha_2 for a region with alpha_1 fixed, or nullopt.
/// Objective and capacity rows only grow with alpha, so this point dominates
/// every other feasible alpha_2.
inline std::optional<double> min_second(const mums::costsel::Region& r, double a1, double w_max, double gamma) {
  const double T = r.target;
  const double lo_rate = (T - a1 * r.rate[0]) / r.rate[1];
  // (a1 R1 + a2 R2 - T)^2 + a1^2 v1 + a2^2 v2 <= gamma^2 as a quadratic in a2.
  const double d = a1 * r.rate[0] - T;
  const double qa = r.rate[1] * r.rate[1] + r.variance[1];
  const double qb = 2.0 * d * r.rate[1];
  const double qc = d * d + a1 * a1 * r.variance[0] - gamma * gamma;
  const double disc = qb * qb - 4 * qa * qc;
  if (disc < 0) return std::nullopt;
  const double root_lo = (-qb - std::sqrt(disc)) / (2 * qa);
  const double root_hi = (-qb + std::sqrt(disc)) / (2 * qa);
  const double lo = std::max({0.0, lo_rate, root_lo});
  const double hi = std::min(w_max, root_hi);
  if (lo > hi) return std::nullopt;
  return lo;
}

struct SelectionOracle {
  bool feasible = false;
  double objective = std::numeric_limits<double>::infinity();
};

inline SelectionOracle selection_grid_2x2(const mums::costsel::SelectionProblem& p, double step = 1e-2) {
  using mums::costsel::Matrix;
  SelectionOracle out;
  if (p.regions.size() != 2 || p.links.size() != 2) return out;
  auto scan = [&](double lo0, double hi0, double lo1, double hi1, double h, double& best_a, double& best_b) {
    std::vector<std::pair<double, double>> c0, c1;
    auto curve = [&](const mums::costsel::Region& r, double lo, double hi, std::vector<std::pair<double, double>>& c) {
      const auto steps = static_cast<long>(std::ceil((hi - lo) / h - 1e-9));
      for (long k = 0; k <= steps; ++k) {
        const double a1 = std::min(hi, lo + k * h);
        if (auto a2 = min_second(r, a1, p.w_max, p.gamma)) c.emplace_back(a1, *a2);
      }
    };
    curve(p.regions[0], lo0, hi0, c0);
    curve(p.regions[1], lo1, hi1, c1);
    for (const auto& x : c0)
      for (const auto& y : c1) {
        const Matrix a{{x.first, x.second}, {y.first, y.second}};
        const auto load = mums::costsel::induced_load(p, a);
        bool ok = true;
        for (std::size_t j = 0; j < 2; ++j)
          if (load[j] + p.links[j].current_load > p.links[j].capacity + 1e-9) ok = false;
        if (!ok) continue;
        const double v = mums::costsel::excess_objective(p, a);
        if (v < out.objective) {
          out.objective = v;
          out.feasible = true;
          best_a = x.first;
          best_b = y.first;
        }
      }
  };
  double a = 0.0, b = 0.0;
  scan(0.0, p.w_max, 0.0, p.w_max, step, a, b);
  if (!out.feasible) return out;
  // Local refinement around the best coarse pair.
  const double h = step / 50.0;
  scan(std::max(0.0, a - 2 * step), std::min(p.w_max, a + 2 * step), std::max(0.0, b - 2 * step),
       std::min(p.w_max, b + 2 * step), h, a, b);
  return out;
}

/// Random two-region, two-link instance; F and L are drawn around the
/// load the regions would induce so that the hinge is sometimes active.
inline mums::costsel::SelectionProblem random_selection(RngStream& rng) {
  mums::costsel::SelectionProblem p;
  p.w_max = 2.0;
  double tmax = 0.0;
  for (int i = 0; i < 2; ++i) {
    mums::costsel::Region r;
    r.expected_arrivals = rng.uniform(1.0, 10.0);
    r.target = rng.uniform(2.0, 6.0);
    for (int j = 0; j < 2; ++j) {
      const double rate = rng.uniform(2.0, 10.0);
      const double cv = rng.uniform(0.05, 0.3);
      r.rate.push_back(rate);
      r.variance.push_back(cv * cv * rate * rate);
    }
    tmax = std::max(tmax, r.target);
    p.regions.push_back(r);
  }
  p.gamma = rng.uniform(0.4, 0.8) * tmax;
  double typical = 0.0;
  for (const auto& r : p.regions) typical += r.expected_arrivals * r.target;
  for (int j = 0; j < 2; ++j) {
    mums::costsel::LinkState l;
    l.current_load = rng.uniform(0.0, 0.5) * typical;
    l.current_p95 = l.current_load + rng.uniform(-0.2, 0.8) * typical;
    l.capacity = 1e18;
    p.links.push_back(l);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Cost model

/// Exact q-quantile of Poisson(rho): the stationary M/G/infinity occupancy.
inline double poisson_quantile(double rho, double q) {
  double pmf = std::exp(-rho), cdf = pmf;
  std::uint64_t k = 0;
  if (pmf == 0.0) {
    // Work in logs for large rho.
    double logp = -rho;
    double acc = 0.0;
    for (k = 0;; ++k) {
      if (k > 0) logp += std::log(rho) - std::log(static_cast<double>(k));
      acc += std::exp(logp);
      if (acc >= q) return static_cast<double>(k);
    }
  }
  while (cdf < q) {
    ++k;
    pmf *= rho / static_cast<double>(k);
    cdf += pmf;
  }
  return static_cast<double>(k);
}

/// Independent M/G/infinity sampler: Poisson arrivals over a window of one
/// service time before each sampling instant.
inline double occupancy_quantile(double lambda, double service_s, std::size_t samples, double q, RngStream rng) {
  std::vector<double> occ;
  occ.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    double t = rng.exponential(1.0 / lambda);
    std::uint64_t n = 0;
    while (t <= service_s) {
      ++n;
      t += rng.exponential(1.0 / lambda);
    }
    occ.push_back(static_cast<double>(n));
  }
  std::sort(occ.begin(), occ.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(occ.size()) - 1e-9));
  return occ[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace oracles
