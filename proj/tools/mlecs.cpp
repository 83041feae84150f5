#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mlecs/comm.hpp"
#include "mlecs/config.hpp"
#include "mlecs/orchestrator.hpp"
#include "mlecs/verify.hpp"

namespace {

using namespace mlecs;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
};

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("mlecs");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* env = std::getenv("MLECS_LOG");
  const std::string level = env != nullptr ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") spdlog::warn("MLECS_LOG={} not one of error, info, debug; using info", level);
    spdlog::set_level(spdlog::level::info);
  }
}

ExperimentConfig load(const Common& c) {
  std::vector<std::string> overrides = c.overrides;
  if (c.seed) overrides.push_back(fmt::format("seed={}", *c.seed));
  if (c.config_path.empty()) return parse_config_text("{}", overrides, "<defaults>");
  return parse_config(c.config_path, overrides);
}

std::size_t workers_for(const Common& c, const ExperimentConfig& config) {
  return c.workers.value_or(config.n_devices);
}

void add_common(CLI::App* sub, Common& c, bool config_required) {
  auto* opt = sub->add_option("--config", c.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  if (config_required) opt->required();
  sub->add_option("--set", c.overrides, "override a config key, KEY=VALUE with dotted keys (repeatable)");
  sub->add_option("--out", c.out_dir, "output directory");
  sub->add_option("--workers", c.workers, "device worker threads (default: number of devices)");
  sub->add_option("--seed", c.seed, "master seed");
}

std::string opt_f(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : "-"; }

int cmd_run(const Common& c) {
  const ExperimentConfig config = load(c);
  const auto result = run_to_directory(config, c.out_dir, RunOptions{workers_for(c, config), {}});
  const auto& s = result.summary;
  fmt::print("mode {} seed {}: Avg. F1 {:.4f}  B. F1 {:.4f}  W. F1 {:.4f}  server F1 {}\n", to_string(s.mode),
             s.seed, s.f1.avg, s.f1.best, s.f1.worst, opt_f(s.server_f1));
  fmt::print("uplink {} params ({} bytes), downlink {} params ({} bytes)\n", s.uplink_params,
             s.uplink_params * kBytesPerParam, s.downlink_params, s.downlink_params * kBytesPerParam);
  fmt::print("outputs in {}\n", c.out_dir);
  return 0;
}

int cmd_gradcheck(const Common& c, std::size_t cases) {
  const std::uint64_t seed = c.seed.value_or(ExperimentConfig{}.seed);
  const GradSuiteReport report = run_gradient_suite(seed, cases);
  fmt::print("{}", report.format());
  return report.passed() ? 0 : 1;
}

int cmd_bench_comm(const Common& c) {
  const ExperimentConfig config = load(c);
  const auto rows = comm_table(config);
  fmt::print("{}", format_comm_table(rows));
  const bool linear = rows[1].adapter_params == 3 * rows[0].adapter_params;
  const bool small = rows[2].ratio < 0.01;
  fmt::print("adapter volume at 3x rank is {}x ({})\n",
             static_cast<double>(rows[1].adapter_params) / static_cast<double>(rows[0].adapter_params),
             linear ? "ok" : "FAIL");
  fmt::print("scale fixture transmits {:.4f}% of its parameters per device ({})\n", 100.0 * rows[2].ratio,
             small ? "ok" : "FAIL");
  return linear && small ? 0 : 1;
}

int cmd_ablate(const Common& c, std::size_t seeds) {
  const ExperimentConfig base = load(c);
  const Mode modes[] = {Mode::mlecs, Mode::mlecs_wo_mma, Mode::mlecs_wo_seccl, Mode::standalone,
                        Mode::fedavg_uniform};
  std::filesystem::create_directories(c.out_dir);
  std::ofstream csv(std::filesystem::path(c.out_dir) / "ablation.csv", std::ios::trunc);
  csv << "mode,seed,avg_f1,best_f1,worst_f1,server_f1,uplink_params,downlink_params\n";
  fmt::print("{:<16} {:>8} {:>8} {:>8} {:>8} {:>10} {:>12} {:>12}\n", "mode", "seed", "avg_f1", "best_f1",
             "worst_f1", "server_f1", "uplink", "downlink");
  for (std::size_t k = 0; k < seeds; ++k) {
    for (Mode m : modes) {
      ExperimentConfig cfg = base;
      cfg.mode = m;
      cfg.seed = base.seed + k;
      const auto s = run_experiment(cfg, RunOptions{workers_for(c, cfg), {}}).summary;
      fmt::print("{:<16} {:>8} {:>8.4f} {:>8.4f} {:>8.4f} {:>10} {:>12} {:>12}\n", to_string(m), cfg.seed, s.f1.avg,
                 s.f1.best, s.f1.worst, opt_f(s.server_f1), s.uplink_params, s.downlink_params);
      csv << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{},{},{}\n", to_string(m), cfg.seed, s.f1.avg, s.f1.best,
                         s.f1.worst, s.server_f1 ? fmt::format("{:.6f}", *s.server_f1) : "", s.uplink_params,
                         s.downlink_params);
    }
  }
  return 0;
}

int cmd_selftest(const Common& c) {
  const ExperimentConfig config = load(c);
  bool ok = true;
  for (const auto& chk : run_selftest(config, workers_for(c, config))) {
    fmt::print("[{}] {}{}\n", chk.passed ? "PASS" : "FAIL", chk.name, chk.detail.empty() ? "" : ": " + chk.detail);
    ok = ok && chk.passed;
  }
  fmt::print("selftest {}\n", ok ? "passed" : "FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Edge-cloud collaborative multimodal learning simulator"};
  app.require_subcommand(1);

  Common run_opts, grad_opts, comm_opts, ablate_opts, self_opts;
  std::size_t cases = 12;
  std::size_t seeds = 1;

  auto* run = app.add_subcommand("run", "run one experiment and write metrics, summary and checkpoints");
  add_common(run, run_opts, true);
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  add_common(grad, grad_opts, false);
  grad->add_option("--cases", cases, "randomized cases per gradient family")->check(CLI::PositiveNumber);
  auto* comm = app.add_subcommand("bench-comm", "print the communication accounting table");
  add_common(comm, comm_opts, false);
  auto* ablate = app.add_subcommand("ablate", "compare every mode on shared seeds");
  add_common(ablate, ablate_opts, true);
  ablate->add_option("--seeds", seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  auto* self = app.add_subcommand("selftest", "quick end-to-end sanity checks");
  add_common(self, self_opts, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_opts);
    if (grad->parsed()) return cmd_gradcheck(grad_opts, cases);
    if (comm->parsed()) return cmd_bench_comm(comm_opts);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, seeds);
    if (self->parsed()) return cmd_selftest(self_opts);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 1;
}
