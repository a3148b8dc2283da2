#pragma once

// Small dense simplex: maximize c'x subject to Ax <= b, x >= 0.
// Two-phase tableau method with Bland-style tie handling. Problems in this
// project have at most a few hundred rows, so a dense tableau is adequate.

#include <cmath>
#include <limits>
#include <vector>

namespace mums::lp {

enum class Status { Optimal, Infeasible, Unbounded };

struct Result {
  Status status = Status::Infeasible;
  double value = 0.0;
  std::vector<double> x;
};

class DenseSimplex {
 public:
  using Row = std::vector<double>;

  DenseSimplex(const std::vector<Row>& a, const Row& b, const Row& c)
      : m_(static_cast<int>(b.size())), n_(static_cast<int>(c.size())), nonbasic_(n_ + 1), basic_(m_),
        d_(m_ + 2, Row(n_ + 2, 0.0)) {
    for (int i = 0; i < m_; ++i)
      for (int j = 0; j < n_; ++j) d_[i][j] = a[i][j];
    for (int i = 0; i < m_; ++i) {
      basic_[i] = n_ + i;
      d_[i][n_] = -1.0;
      d_[i][n_ + 1] = b[i];
    }
    for (int j = 0; j < n_; ++j) {
      nonbasic_[j] = j;
      d_[m_][j] = -c[j];
    }
    nonbasic_[n_] = -1;
    d_[m_ + 1][n_] = 1.0;
  }

  Result solve() {
    Result res;
    int r = 0;
    for (int i = 1; i < m_; ++i)
      if (d_[i][n_ + 1] < d_[r][n_ + 1]) r = i;
    if (m_ > 0 && d_[r][n_ + 1] < -kEps) {
      pivot(r, n_);
      if (!run(2) || d_[m_ + 1][n_ + 1] < -kEps) {
        res.status = Status::Infeasible;
        return res;
      }
      for (int i = 0; i < m_; ++i) {
        if (basic_[i] == -1) {
          int s = 0;
          for (int j = 1; j <= n_; ++j)
            if (s == -1 || less(d_[i][j], nonbasic_[j], d_[i][s], nonbasic_[s])) s = j;
          pivot(i, s);
        }
      }
    }
    const bool bounded = run(1);
    res.x.assign(n_, 0.0);
    for (int i = 0; i < m_; ++i)
      if (basic_[i] < n_) res.x[basic_[i]] = d_[i][n_ + 1];
    if (!bounded) {
      res.status = Status::Unbounded;
      res.value = std::numeric_limits<double>::infinity();
      return res;
    }
    res.status = Status::Optimal;
    res.value = d_[m_][n_ + 1];
    return res;
  }

 private:
  static constexpr double kEps = 1e-11;

  static bool less(double a, int ia, double b, int ib) {
    // Ratio comparison with index tie-break keeps the pivot rule cycle free.
    return a < b - kEps || (std::fabs(a - b) <= kEps && ia < ib);
  }

  void pivot(int r, int s) {
    const double inv = 1.0 / d_[r][s];
    for (int i = 0; i < m_ + 2; ++i) {
      if (i == r || std::fabs(d_[i][s]) <= kEps) continue;
      const double f = d_[i][s] * inv;
      Row& di = d_[i];
      const Row& dr = d_[r];
      for (int j = 0; j < n_ + 2; ++j) di[j] -= dr[j] * f;
      di[s] = dr[s] * f;
    }
    for (int j = 0; j < n_ + 2; ++j)
      if (j != s) d_[r][j] *= inv;
    for (int i = 0; i < m_ + 2; ++i)
      if (i != r) d_[i][s] *= -inv;
    d_[r][s] = inv;
    std::swap(basic_[r], nonbasic_[s]);
  }

  bool run(int phase) {
    const int x = m_ + phase - 1;
    for (int guard = 0; guard < 100000; ++guard) {
      int s = -1;
      for (int j = 0; j <= n_; ++j) {
        if (nonbasic_[j] == -phase) continue;
        if (s == -1 || less(d_[x][j], nonbasic_[j], d_[x][s], nonbasic_[s])) s = j;
      }
      if (d_[x][s] >= -kEps) return true;
      int r = -1;
      for (int i = 0; i < m_; ++i) {
        if (d_[i][s] <= kEps) continue;
        if (r == -1) {
          r = i;
          continue;
        }
        const double lhs = d_[i][n_ + 1] / d_[i][s];
        const double rhs = d_[r][n_ + 1] / d_[r][s];
        if (lhs < rhs - kEps || (std::fabs(lhs - rhs) <= kEps && basic_[i] < basic_[r])) r = i;
      }
      if (r == -1) return false;
      pivot(r, s);
    }
    return true;
  }

  int m_;
  int n_;
  std::vector<int> nonbasic_;
  std::vector<int> basic_;
  std::vector<Row> d_;
};

/// maximize c'x s.t. a x <= b, x >= 0.
inline Result maximize(const std::vector<std::vector<double>>& a, const std::vector<double>& b,
                       const std::vector<double>& c) {
  return DenseSimplex(a, b, c).solve();
}

}  // namespace mums::lp
