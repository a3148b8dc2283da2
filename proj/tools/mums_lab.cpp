// mums-lab: run experiments, compare the cost model, run oracle self-checks.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "mums/mums.hpp"
#include "suites.hpp"

using namespace mums;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out_dir,
                const std::string& scheduler, bool trace) {
  ExperimentConfig cfg;
  try {
    cfg = harness::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!scheduler.empty()) harness::apply_setting(cfg, "scheduler", scheduler);
    cfg.validate();
  } catch (const harness::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    std::filesystem::create_directories(out_dir);
    std::ofstream trace_file;
    std::string trace_path = cfg.trace_path;
    if (trace && trace_path.empty()) trace_path = (std::filesystem::path(out_dir) / "trace.txt").string();
    if (!trace_path.empty()) {
      trace_file.open(trace_path);
      if (!trace_file) throw std::runtime_error("cannot open trace file " + trace_path);
    }
    const auto rep = harness::run_experiment(cfg, 0, trace_file.is_open() ? &trace_file : nullptr);
    harness::emit_csv(rep, out_dir);

    std::printf("scheduler %s, k=%u, %zu runs, seed %llu\n", harness::to_string(cfg.scheduler), cfg.effective_k(),
                rep.per_run.size(), static_cast<unsigned long long>(cfg.seed));
    std::printf("zero-stall fraction  median %.3f  [%.3f, %.3f]\n", rep.zero_stall.median, rep.zero_stall.min,
                rep.zero_stall.max);
    std::printf("stall fraction       median %.4f  q3 %.4f  max %.4f\n", rep.stall_fraction.median,
                rep.stall_fraction.q3, rep.stall_fraction.max);
    std::printf("skips per client     median %.1f  max %.0f\n", rep.skips.median, rep.skips.max);
    std::printf("total p95 cost       median %.0f bytes/bucket\n", rep.total_cost.median);
    std::printf("wrote %s/{qoe,cost,ledger}.csv\n", out_dir.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

int cost_model_command(const costsel::CostModelParams& p, double horizon, std::uint64_t seed) {
  try {
    p.validate();
    const auto a = costsel::analytic_cost(p);
    const auto o = costsel::mg_infinity_oracle(p, horizon, RngStream(seed, 0));
    std::printf("rho                 %.6f\n", a.rho);
    std::printf("analytic quantile   %.6f%s\n", a.occupancy_quantile, a.low_load ? "  (rho < 5, normal approximation weak)" : "");
    std::printf("oracle quantile     %.6f  (%zu samples)\n", o.occupancy_quantile, o.samples);
    std::printf("analytic cost/link  %.6f\n", a.cost);
    std::printf("oracle cost/link    %.6f\n", o.cost);
    if (o.cost > 0) std::printf("relative gap        %.6f\n", (a.cost - o.cost) / o.cost);
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "cost-model: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

int selftest_command() {
  struct Item {
    const char* name;
    suites::Verdict (*fn)();
  };
  const Item items[] = {
      {"allocation LP", [] { return suites::lp_equivalence(); }},
      {"server selection", [] { return suites::selection_equivalence(); }},
      {"normal approximation", [] { return suites::normal_approximation(); }},
      {"cost monotone in T", [] { return suites::cost_monotone(); }},
      {"peak subadditivity", [] { return suites::subadditivity_random(); }},
  };
  bool all = true;
  for (const auto& it : items) {
    const auto v = it.fn();
    all = all && v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", it.name, v.detail.c_str());
  }
  return all ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-server streaming lab"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string config_path, out_dir = "out", scheduler;
  std::uint64_t seed_value = 0;
  bool trace = false;
  run->add_option("config", config_path, "Config file")->required();
  auto* seed_opt = run->add_option("--seed", seed_value, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--scheduler", scheduler, "sunstar | minrtt | single | aggressive");
  run->add_flag("--trace", trace, "Write the event trace of run 0 to <out>/trace.txt");

  auto* cost = app.add_subcommand("cost-model", "Analytic cost against the M/G/inf oracle");
  costsel::CostModelParams p;
  double horizon = 3e6;
  std::uint64_t cost_seed = 1;
  cost->add_option("--lambda", p.arrival_rate, "Arrivals per second")->required();
  cost->add_option("--size", p.video_size, "Video size in chunks")->required();
  cost->add_option("--rate", p.download_rate, "Download rate T in chunks/s")->required();
  cost->add_option("--servers", p.servers, "Servers per client k")->required();
  cost->add_option("--q", p.percentile, "Billing percentile")->default_val(0.95);
  cost->add_option("--horizon", horizon, "Oracle horizon in seconds")->default_val(3e6);
  cost->add_option("--seed", cost_seed, "Oracle seed")->default_val(1);

  auto* selftest = app.add_subcommand("selftest", "Run the oracle-equivalence suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  if (*run) {
    std::optional<std::uint64_t> seed;
    if (*seed_opt) seed = seed_value;
    return run_command(config_path, seed, out_dir, scheduler, trace);
  }
  if (*cost) return cost_model_command(p, horizon, cost_seed);
  if (*selftest) return selftest_command();
  return kConfigError;
}
