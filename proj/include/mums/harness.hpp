#pragma once

// Experiment runner: config parsing, repetitions, aggregation and CSV output.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mums/config.hpp"
#include "mums/costsel.hpp"
#include "mums/simnet.hpp"

namespace mums::harness {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& field, const std::string& msg)
      : std::runtime_error(format(line, field, msg)), line_(line), field_(field) {}
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(int line, const std::string& field, const std::string& msg) {
    std::string s = "config";
    if (line > 0) s += " line " + std::to_string(line);
    if (!field.empty()) s += " (" + field + ")";
    return s + ": " + msg;
  }
  int line_;
  std::string field_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  for (auto& ch : s)
    if (ch == '-') ch = '_';
  return s;
}

inline double to_double(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return d;
}

inline std::uint64_t to_uint(const std::string& v) {
  if (v.empty() || v[0] == '-') throw std::invalid_argument("expected a non-negative integer");
  std::size_t used = 0;
  const auto x = std::stoull(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return x;
}

inline bool to_bool(const std::string& v) {
  const auto s = lower(v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected a boolean");
}

inline std::vector<double> to_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item)));
  return out;
}

template <typename E>
E to_enum(const std::string& v, std::initializer_list<std::pair<const char*, E>> names) {
  const auto s = lower(v);
  for (const auto& [n, e] : names)
    if (s == n) return e;
  std::string all;
  for (const auto& [n, e] : names) all += std::string(all.empty() ? "" : ", ") + n;
  throw std::invalid_argument("expected one of " + all);
}

}  // namespace detail

inline SchedulerKind parse_scheduler(const std::string& v) {
  return detail::to_enum<SchedulerKind>(v, {{"sunstar", SchedulerKind::SunStar},
                                            {"minrtt", SchedulerKind::MinRtt},
                                            {"min_rtt", SchedulerKind::MinRtt},
                                            {"single", SchedulerKind::SingleServer},
                                            {"singleserver", SchedulerKind::SingleServer},
                                            {"single_server", SchedulerKind::SingleServer},
                                            {"aggressive", SchedulerKind::Aggressive}});
}

inline const char* to_string(SchedulerKind k) {
  switch (k) {
    case SchedulerKind::SunStar: return "sunstar";
    case SchedulerKind::MinRtt: return "minrtt";
    case SchedulerKind::SingleServer: return "single";
    case SchedulerKind::Aggressive: return "aggressive";
  }
  return "?";
}

/// Applies one `key = value` setting. Throws std::invalid_argument on a bad
/// value and ConfigError on an unknown key.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& v, int line = 0) {
  using namespace detail;
  const std::string k = lower(key);
  try {
    if (k == "scenario") c.scenario = to_enum<Scenario>(v, {{"performance", Scenario::Performance}, {"cost", Scenario::Cost}});
    else if (k == "n_servers") c.n_servers = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "servers_per_client" || k == "k") c.servers_per_client = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "scheduler") c.scheduler = parse_scheduler(v);
    else if (k == "selection")
      c.selection = to_enum<SelectionKind>(v, {{"round_robin", SelectionKind::RoundRobin},
                                               {"k_closest", SelectionKind::KClosest},
                                               {"optimized", SelectionKind::Optimized}});
    else if (k == "capacity")
      c.capacity = to_enum<CapacityProfile>(v, {{"medium", CapacityProfile::Medium}, {"high", CapacityProfile::High}});
    else if (k == "variation")
      c.variation = to_enum<VariationMode>(
          v, {{"smooth", VariationMode::Smooth}, {"abrupt", VariationMode::Abrupt}, {"fixed", VariationMode::Fixed}});
    else if (k == "fixed_bandwidth_factor") c.fixed_bandwidth_factor = to_double(v);
    else if (k == "topology")
      c.topology = to_enum<Topology>(v, {{"dedicated", Topology::Dedicated}, {"group_shared", Topology::GroupShared}});
    else if (k == "group_size") c.group_size = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "clients_concurrent") c.clients_concurrent = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "churn") c.churn = to_bool(v);
    else if (k == "arrival_spread_s") c.arrival_spread_s = to_double(v);
    else if (k == "video_durations_min") c.video_durations_min = to_list(v);
    else if (k == "video_weights") c.video_weights = to_list(v);
    else if (k == "video_chunks") c.video_chunks = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "playback_rate") c.playback_rate = to_double(v);
    else if (k == "chunk_size") c.chunk_size = to_uint(v);
    else if (k == "target_factor") c.target_factor = to_double(v);
    else if (k == "epoch_s") c.epoch_s = to_double(v);
    else if (k == "prebuffer_chunks") c.prebuffer_chunks = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "max_buffer_chunks") c.max_buffer_chunks = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "retry_limit") c.retry_limit = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "min_rto_ms") c.min_rto_ms = to_double(v);
    else if (k == "initial_rto_ms") c.initial_rto_ms = to_double(v);
    else if (k == "opportunistic_retransmit") c.opportunistic_retransmit = to_bool(v);
    else if (k == "smoothing") c.smoothing = to_double(v);
    else if (k == "initial_window") c.initial_window = to_double(v);
    else if (k == "max_window") c.max_window = to_double(v);
    else if (k == "prop_delay_min_ms") c.prop_delay_min_ms = to_double(v);
    else if (k == "prop_delay_max_ms") c.prop_delay_max_ms = to_double(v);
    else if (k == "queue_packets") c.queue_packets = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "packets_per_chunk") c.packets_per_chunk = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "gamma_factor") c.gamma_factor = to_double(v);
    else if (k == "selection_period_s") c.selection_period_s = to_double(v);
    else if (k == "selection_objective")
      c.selection_max_objective = to_enum<bool>(v, {{"sum", false}, {"max", true}});
    else if (k == "horizon_s") c.horizon_s = to_double(v);
    else if (k == "repetitions") c.repetitions = static_cast<std::uint32_t>(to_uint(v));
    else if (k == "seed") c.seed = to_uint(v);
    else if (k == "trace_path") c.trace_path = v;
    else throw ConfigError(line, key, "unknown key");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(line, key, "bad value '" + v + "': " + e.what());
  }
}

/// Parses line-oriented `key = value` text; `#` starts a comment.
inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const auto text = detail::trim(raw);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "", "expected 'key = value'");
    const auto key = detail::trim(text.substr(0, eq));
    const auto value = detail::trim(text.substr(eq + 1));
    if (key.empty()) throw ConfigError(line, "", "missing key");
    apply_setting(c, key, value, line);
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, "", e.what());
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "", "cannot open " + path.string());
  return parse_config(in);
}

// ---------------------------------------------------------------------------
// Runs and reports

struct Summary {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  std::size_t n = 0;
};

/// Quartiles by linear interpolation between order statistics.
inline Summary summarize(std::vector<double> v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  s.min = v.front();
  s.q1 = at(0.25);
  s.median = at(0.5);
  s.q3 = at(0.75);
  s.max = v.back();
  return s;
}

struct RunResult {
  std::uint32_t run_id = 0;
  std::vector<simnet::ClientReport> clients;
  std::vector<costsel::TrafficLedger> ledgers;
  std::vector<double> link_p95;  // bytes per 5-minute bucket
  double total_p95_cost = 0.0;
  simnet::SimCounters counters;

  double zero_stall_fraction() const {
    if (clients.empty()) return 0.0;
    const auto n = std::count_if(clients.begin(), clients.end(), [](const auto& c) { return c.qoe.stall_count == 0; });
    return static_cast<double>(n) / static_cast<double>(clients.size());
  }
  Summary stall_fraction() const {
    std::vector<double> v;
    for (const auto& c : clients) v.push_back(c.qoe.stall_fraction);
    return summarize(std::move(v));
  }
  Summary skips() const {
    std::vector<double> v;
    for (const auto& c : clients) v.push_back(c.qoe.skipped_chunks);
    return summarize(std::move(v));
  }
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<RunResult> per_run;
  Summary total_cost;
  Summary stall_fraction;  // over all clients of all runs
  Summary skips;
  Summary zero_stall;      // per-run fraction of clients without stalls
};

inline constexpr double kBillingPercentile = 0.95;

inline RunResult summarize_run(std::uint32_t run_id, simnet::SimulationTrace trace) {
  RunResult r;
  r.run_id = run_id;
  r.clients = std::move(trace.clients);
  r.ledgers = std::move(trace.ledgers);
  r.counters = trace.counters;
  for (const auto& l : r.ledgers) {
    const double p = costsel::percentile_cost(l, kBillingPercentile);
    r.link_p95.push_back(p);
    r.total_p95_cost += p;
  }
  std::sort(r.clients.begin(), r.clients.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  return r;
}

/// Stream for repetition `run_id`. Shared by every scheduler variant so the
/// same run id sees the same bandwidth traces and arrivals.
inline RngStream run_stream(std::uint64_t seed, std::uint32_t run_id) { return rng_split(RngStream(seed, 0), run_id); }

inline RunResult run_once(const ExperimentConfig& cfg, std::uint32_t run_id, std::ostream* trace = nullptr) {
  return summarize_run(run_id, simnet::run(cfg, run_stream(cfg.seed, run_id), trace));
}

inline void aggregate(ExperimentReport& rep) {
  std::vector<double> cost, stall, skips, zero;
  for (const auto& r : rep.per_run) {
    cost.push_back(r.total_p95_cost);
    zero.push_back(r.zero_stall_fraction());
    for (const auto& c : r.clients) {
      stall.push_back(c.qoe.stall_fraction);
      skips.push_back(c.qoe.skipped_chunks);
    }
  }
  rep.total_cost = summarize(std::move(cost));
  rep.stall_fraction = summarize(std::move(stall));
  rep.skips = summarize(std::move(skips));
  rep.zero_stall = summarize(std::move(zero));
}

/// Runs every repetition. Repetitions are independent and may run on several
/// threads; results are ordered by run id either way. The event trace, when
/// requested, covers run 0 only and forces a single thread.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, unsigned threads = 0, std::ostream* trace = nullptr) {
  cfg.validate();
  ExperimentReport rep;
  rep.config = cfg;
  rep.per_run.resize(cfg.repetitions);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (trace) threads = 1;
  threads = std::min<unsigned>(threads, cfg.repetitions);

  if (threads <= 1) {
    for (std::uint32_t r = 0; r < cfg.repetitions; ++r) rep.per_run[r] = run_once(cfg, r, r == 0 ? trace : nullptr);
  } else {
    std::atomic<std::uint32_t> next{0};
    std::vector<std::future<void>> workers;
    for (unsigned t = 0; t < threads; ++t) {
      workers.push_back(std::async(std::launch::async, [&] {
        for (std::uint32_t r = next++; r < cfg.repetitions; r = next++) rep.per_run[r] = run_once(cfg, r);
      }));
    }
    for (auto& w : workers) w.get();
  }
  aggregate(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline constexpr const char* kQoeHeader = "run_id,client_id,stall_fraction,mean_stall_s,stall_count,skips";
inline constexpr const char* kCostHeader = "run_id,link_id,p95_bytes,total_p95_cost";

inline void write_qoe_csv(const ExperimentReport& rep, std::ostream& out) {
  out << kQoeHeader << '\n';
  for (const auto& r : rep.per_run)
    for (const auto& c : r.clients)
      out << r.run_id << ',' << c.client_id << ',' << fixed6(c.qoe.stall_fraction) << ','
          << fixed6(c.qoe.mean_stall_duration_s) << ',' << c.qoe.stall_count << ',' << c.qoe.skipped_chunks << '\n';
}

inline void write_cost_csv(const ExperimentReport& rep, std::ostream& out) {
  out << kCostHeader << '\n';
  for (const auto& r : rep.per_run)
    for (std::size_t l = 0; l < r.link_p95.size(); ++l)
      out << r.run_id << ',' << l << ',' << fixed6(r.link_p95[l]) << ',' << fixed6(r.total_p95_cost) << '\n';
}

inline void write_ledger_csv(const ExperimentReport& rep, std::ostream& out) {
  out << "link_id,bucket_index,bytes\n";
  if (rep.per_run.empty()) return;
  const auto& r = rep.per_run.front();
  for (std::size_t l = 0; l < r.ledgers.size(); ++l)
    for (std::size_t b = 0; b < r.ledgers[l].buckets.size(); ++b) out << l << ',' << b << ',' << r.ledgers[l].buckets[b] << '\n';
}

namespace detail {

template <typename Fn>
void write_file(const std::filesystem::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  fn(out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

/// Writes qoe.csv and cost.csv (and ledger.csv for run 0) into `dir`.
inline void emit_csv(const ExperimentReport& rep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  detail::write_file(dir / "qoe.csv", [&](std::ostream& o) { write_qoe_csv(rep, o); });
  detail::write_file(dir / "cost.csv", [&](std::ostream& o) { write_cost_csv(rep, o); });
  detail::write_file(dir / "ledger.csv", [&](std::ostream& o) { write_ledger_csv(rep, o); });
}

struct QoeRow {
  std::uint32_t run_id = 0, client_id = 0;
  double stall_fraction = 0.0, mean_stall_s = 0.0;
  std::uint32_t stall_count = 0, skips = 0;
};

struct CostRow {
  std::uint32_t run_id = 0, link_id = 0;
  double p95_bytes = 0.0, total_p95_cost = 0.0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace detail

inline std::vector<QoeRow> read_qoe_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kQoeHeader) throw std::runtime_error("qoe.csv: bad header");
  std::vector<QoeRow> rows;
  while (std::getline(in, line)) {
    const auto f = detail::split_csv_line(line);
    if (f.size() != 6) throw std::runtime_error("qoe.csv: bad row '" + line + "'");
    rows.push_back({static_cast<std::uint32_t>(std::stoul(f[0])), static_cast<std::uint32_t>(std::stoul(f[1])),
                    std::stod(f[2]), std::stod(f[3]), static_cast<std::uint32_t>(std::stoul(f[4])),
                    static_cast<std::uint32_t>(std::stoul(f[5]))});
  }
  return rows;
}

inline std::vector<CostRow> read_cost_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCostHeader) throw std::runtime_error("cost.csv: bad header");
  std::vector<CostRow> rows;
  while (std::getline(in, line)) {
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4) throw std::runtime_error("cost.csv: bad row '" + line + "'");
    rows.push_back({static_cast<std::uint32_t>(std::stoul(f[0])), static_cast<std::uint32_t>(std::stoul(f[1])),
                    std::stod(f[2]), std::stod(f[3])});
  }
  return rows;
}

}  // namespace mums::harness
