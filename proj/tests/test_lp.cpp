#include <gtest/gtest.h>

#include <chrono>

#include "mums/lp.hpp"
#include "mums/scheduler.hpp"
#include "oracles.hpp"

using namespace mums;

TEST(Simplex, SmallMaximization) {
  // max 3x + 2y, x + y <= 4, x + 3y <= 6, x <= 3.
  const auto r = lp::maximize({{1, 1}, {1, 3}, {1, 0}}, {4, 6, 3}, {3, 2});
  ASSERT_EQ(r.status, lp::Status::Optimal);
  EXPECT_NEAR(r.value, 11.0, 1e-9);
  EXPECT_NEAR(r.x[0], 3.0, 1e-9);
  EXPECT_NEAR(r.x[1], 1.0, 1e-9);
}

TEST(Simplex, DetectsInfeasibleAndUnbounded) {
  EXPECT_EQ(lp::maximize({{1}, {-1}}, {1, -2}, {1}).status, lp::Status::Infeasible);
  EXPECT_EQ(lp::maximize({{-1}}, {1}, {1}).status, lp::Status::Unbounded);
}

TEST(Simplex, NegativeRightHandSide) {
  // x >= 2 written as -x <= -2; min x.
  const auto r = lp::maximize({{-1}}, {-2}, {-1});
  ASSERT_EQ(r.status, lp::Status::Optimal);
  EXPECT_NEAR(r.x[0], 2.0, 1e-12);
}

TEST(SolveLp, SingleExactServer) {
  oracles::LpInstance in{{10}, {10}, {10}, {5}, 10};
  const auto paths = oracles::to_paths(in);
  const auto a = scheduler::solve_lp(paths, Rate(10.0));
  ASSERT_TRUE(a);
  EXPECT_NEAR(a->per_server[0].alpha, 1.0, 1e-9);
  EXPECT_NEAR(a->achieved_deviation, 0.0, 1e-9);
}

TEST(SolveLp, TwoServerExampleMatchesGrid) {
  oracles::LpInstance in{{8, 4}, {9, 5}, {7, 3}, {2, 2}, 10};
  const auto paths = oracles::to_paths(in);
  const auto a = scheduler::solve_lp(paths, Rate(10.0));
  ASSERT_TRUE(a);
  const auto grid = oracles::lp_grid_optimum_2(in);
  const auto exact = oracles::lp_vertex_optimum(in);
  ASSERT_TRUE(grid && exact);
  EXPECT_NEAR(a->achieved_deviation, *grid, 1e-3);
  EXPECT_NEAR(a->achieved_deviation, *exact, 1e-9);
  EXPECT_LE(scheduler::constraint_residual(paths, *a, 10.0), 1e-9);
}

TEST(SolveLp, CapacityShortfallIsInfeasible) {
  oracles::LpInstance in{{3, 3}, {3, 3}, {3, 3}, {1, 1}, 10};
  EXPECT_FALSE(scheduler::solve_lp(oracles::to_paths(in), Rate(10.0)));
  EXPECT_FALSE(oracles::lp_vertex_optimum(in));
}

TEST(SolveLp, IdenticalPathsUseOneServer) {
  oracles::LpInstance in{{10, 10, 10}, {12, 12, 12}, {8, 8, 8}, {5, 5, 5}, 10};
  const auto a = scheduler::solve_lp(oracles::to_paths(in), Rate(10.0));
  ASSERT_TRUE(a);
  EXPECT_EQ(a->support(), 1u);
}

TEST(SolveLp, UsageHistoryBreaksTies) {
  oracles::LpInstance in{{10, 10}, {12, 12}, {8, 8}, {5, 5}, 10};
  const std::vector<double> usage{1.0, 9.0};
  const auto a = scheduler::solve_lp(oracles::to_paths(in), Rate(10.0), usage);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->support(), 1u);
  EXPECT_GT(a->per_server[1].alpha, 0.0);
}

TEST(SolveLp, RandomInstancesMatchOracles) {
  RngStream rng(2024, 1);
  int feasible = 0;
  double worst_ms = 0.0;
  for (int n = 0; n < 500; ++n) {
    const auto in = oracles::random_lp(rng, 2 + n % 3);
    const auto paths = oracles::to_paths(in);
    const auto t0 = std::chrono::steady_clock::now();
    const auto a = scheduler::solve_lp(paths, Rate(in.target));
    const auto t1 = std::chrono::steady_clock::now();
    worst_ms = std::max(worst_ms, std::chrono::duration<double, std::milli>(t1 - t0).count());
    const auto exact = oracles::lp_vertex_optimum(in);
    ASSERT_EQ(a.has_value(), exact.has_value()) << "instance " << n;
    if (in.size() == 2) {
      const auto grid = oracles::lp_grid_optimum_2(in);
      ASSERT_EQ(exact.has_value(), grid.has_value());
      if (grid) {
        ASSERT_NEAR(*exact, *grid, 1e-3);
      }
    }
    if (!a) continue;
    ++feasible;
    ASSERT_NEAR(a->achieved_deviation, *exact, 1e-3) << "instance " << n;
    ASSERT_LE(scheduler::constraint_residual(paths, *a, in.target), 1e-9) << "instance " << n;
  }
  EXPECT_GT(feasible, 100);
  // Generous bound for sanitizer or debug builds; the acceptance binary pins 1 ms.
  EXPECT_LT(worst_ms, 20.0);
}
