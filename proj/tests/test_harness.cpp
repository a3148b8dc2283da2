#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mums/harness.hpp"

using namespace mums;
using namespace mums::harness;

namespace {

ExperimentConfig small(std::uint64_t seed = 3) {
  ExperimentConfig c;
  c.n_servers = 3;
  c.servers_per_client = 2;
  c.clients_concurrent = 5;
  c.video_chunks = 300;
  c.horizon_s = 400;
  c.repetitions = 2;
  c.seed = seed;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mums_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, ParsesKeysAndComments) {
  const auto c = parse_config_text(
      "# comment\n"
      "scenario = cost\n"
      "n_servers = 10   # trailing\n"
      "k = 3\n"
      "scheduler = min_rtt\n"
      "video_durations_min = 5, 60\n"
      "churn = true\n"
      "\n");
  EXPECT_EQ(c.scenario, Scenario::Cost);
  EXPECT_EQ(c.n_servers, 10u);
  EXPECT_EQ(c.servers_per_client, 3u);
  EXPECT_EQ(c.scheduler, SchedulerKind::MinRtt);
  EXPECT_EQ(c.video_durations_min, (std::vector<double>{5, 60}));
  EXPECT_TRUE(c.churn);
}

TEST(Config, ErrorsCarryLineAndField) {
  try {
    parse_config_text("n_servers = 3\nbogus_key = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.field(), "bogus_key");
  }
  try {
    parse_config_text("\n\nrepetitions = ten\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.field(), "repetitions");
  }
  EXPECT_THROW(parse_config_text("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_config_text("n_servers = 2\nk = 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("target_factor = 0.5\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/file.conf"), ConfigError);
}

TEST(Config, SchedulerNames) {
  for (auto k : {SchedulerKind::SunStar, SchedulerKind::MinRtt, SchedulerKind::SingleServer, SchedulerKind::Aggressive})
    EXPECT_EQ(parse_scheduler(to_string(k)), k);
  EXPECT_THROW(parse_scheduler("fastest"), std::invalid_argument);
}

TEST(Csv, EmptyReportHasHeadersOnly) {
  ExperimentReport rep;
  const auto dir = scratch("empty");
  emit_csv(rep, dir);
  EXPECT_EQ(slurp(dir / "qoe.csv"), std::string(kQoeHeader) + "\n");
  EXPECT_EQ(slurp(dir / "cost.csv"), std::string(kCostHeader) + "\n");
  std::filesystem::remove_all(dir);
}

TEST(Csv, RoundTrip) {
  const auto rep = run_experiment(small(), 1);
  std::stringstream q, c;
  write_qoe_csv(rep, q);
  write_cost_csv(rep, c);
  const auto qrows = read_qoe_csv(q);
  const auto crows = read_cost_csv(c);
  std::size_t i = 0;
  for (const auto& r : rep.per_run)
    for (const auto& cl : r.clients) {
      ASSERT_LT(i, qrows.size());
      EXPECT_EQ(qrows[i].run_id, r.run_id);
      EXPECT_EQ(qrows[i].client_id, cl.client_id);
      EXPECT_NEAR(qrows[i].stall_fraction, cl.qoe.stall_fraction, 5e-7);
      EXPECT_NEAR(qrows[i].mean_stall_s, cl.qoe.mean_stall_duration_s, 5e-7);
      EXPECT_EQ(qrows[i].stall_count, cl.qoe.stall_count);
      EXPECT_EQ(qrows[i].skips, cl.qoe.skipped_chunks);
      ++i;
    }
  EXPECT_EQ(i, qrows.size());
  std::size_t j = 0;
  for (const auto& r : rep.per_run)
    for (std::size_t l = 0; l < r.link_p95.size(); ++l, ++j) {
      EXPECT_EQ(crows[j].link_id, l);
      EXPECT_NEAR(crows[j].p95_bytes, r.link_p95[l], 5e-7);
      EXPECT_NEAR(crows[j].total_p95_cost, r.total_p95_cost, 5e-7);
    }
  EXPECT_EQ(j, crows.size());
}

TEST(Csv, FixedSixDecimals) {
  EXPECT_EQ(fixed6(0.04), "0.040000");
  EXPECT_EQ(fixed6(1234567.0), "1234567.000000");
}

TEST(Experiment, SameSeedSameBytes) {
  const auto a = run_experiment(small(), 2);
  const auto b = run_experiment(small(), 1);
  const auto da = scratch("det_a"), db = scratch("det_b");
  emit_csv(a, da);
  emit_csv(b, db);
  EXPECT_EQ(slurp(da / "qoe.csv"), slurp(db / "qoe.csv"));
  EXPECT_EQ(slurp(da / "cost.csv"), slurp(db / "cost.csv"));
  EXPECT_EQ(slurp(da / "ledger.csv"), slurp(db / "ledger.csv"));
  std::filesystem::remove_all(da);
  std::filesystem::remove_all(db);
}

TEST(Experiment, PairedTracesAcrossSchedulers) {
  auto base = small(11);
  base.variation = VariationMode::Abrupt;
  std::vector<ExperimentReport> reps;
  for (auto k : {SchedulerKind::SunStar, SchedulerKind::MinRtt, SchedulerKind::Aggressive}) {
    auto c = base;
    c.scheduler = k;
    reps.push_back(run_experiment(c, 1));
  }
  for (std::size_t r = 0; r < base.repetitions; ++r) {
    const auto& ref = reps[0].per_run[r].counters;
    for (const auto& rep : reps) {
      EXPECT_EQ(rep.per_run[r].counters.bandwidth_fingerprint, ref.bandwidth_fingerprint);
      EXPECT_EQ(rep.per_run[r].counters.arrival_fingerprint, ref.arrival_fingerprint);
    }
  }
  // Different run ids see different traces.
  EXPECT_NE(reps[0].per_run[0].counters.bandwidth_fingerprint, reps[0].per_run[1].counters.bandwidth_fingerprint);
}

TEST(Experiment, AggregatesRecomputable) {
  const auto rep = run_experiment(small(), 1);
  std::vector<double> cost;
  for (const auto& r : rep.per_run) cost.push_back(r.total_p95_cost);
  const auto s = summarize(cost);
  EXPECT_EQ(rep.total_cost.median, s.median);
  EXPECT_EQ(rep.total_cost.max, s.max);
  double sum = 0.0;
  for (const auto& r : rep.per_run) {
    double links = 0.0;
    for (double p : r.link_p95) links += p;
    EXPECT_DOUBLE_EQ(links, r.total_p95_cost);
    sum += r.zero_stall_fraction();
  }
  EXPECT_GE(sum, 0.0);
}

TEST(Experiment, AggressiveDownloadsAtLeastAsFast) {
  // Ample bandwidth and videos longer than the horizon, so delivered bytes
  // measure the average download rate.
  auto c = small(21);
  c.capacity = CapacityProfile::High;
  c.video_chunks = 5000;
  c.horizon_s = 600;
  double ss = 0.0, ag = 0.0;
  for (auto k : {SchedulerKind::SunStar, SchedulerKind::Aggressive}) {
    c.scheduler = k;
    const auto rep = run_experiment(c, 1);
    double bytes = 0.0;
    for (const auto& r : rep.per_run) bytes += static_cast<double>(r.counters.bytes_departed);
    (k == SchedulerKind::SunStar ? ss : ag) = bytes;
  }
  EXPECT_GE(ag, ss);
}

TEST(Summary, Quartiles) {
  const auto s = summarize({4, 1, 3, 2, 5});
  EXPECT_EQ(s.min, 1);
  EXPECT_EQ(s.median, 3);
  EXPECT_EQ(s.max, 5);
  EXPECT_EQ(s.n, 5u);
  EXPECT_EQ(summarize({}).n, 0u);
}
