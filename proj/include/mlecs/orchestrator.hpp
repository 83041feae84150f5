#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mlecs/comm.hpp"
#include "mlecs/config.hpp"
#include "mlecs/device.hpp"
#include "mlecs/server.hpp"

namespace mlecs {

struct DeviceRoundMetrics {
  std::size_t device_id = 0;
  std::size_t modality_count = 0;
  std::optional<double> ccl_loss;
  std::optional<double> amt_loss;
  double test_f1 = 0.0;

  bool operator==(const DeviceRoundMetrics&) const = default;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<DeviceRoundMetrics> devices;
  std::optional<double> server_llm_loss;
  std::optional<double> server_slm_loss;
  std::optional<double> server_f1;
  std::vector<double> weights;  // empty when nothing is aggregated
  RoundComm comm;
  double wall_seconds = 0.0;  // excluded from equality and from the metrics stream

  bool operator==(const RoundReport& o) const {
    return round == o.round && devices == o.devices && server_llm_loss == o.server_llm_loss &&
           server_slm_loss == o.server_slm_loss && server_f1 == o.server_f1 && weights == o.weights &&
           comm == o.comm;
  }
};

struct Experiment {
  ExperimentConfig config;
  std::vector<std::string> modality_names;
  std::uint64_t adapter_params = 0;  // per device, analytic
  ServerState server;
  std::vector<DeviceState> devices;
};

/// Synthesizes or loads the data, partitions it, assigns modalities and
/// builds every model from per-entity RNG streams of the master seed.
Experiment setup_experiment(const ExperimentConfig& config);

struct RunOptions {
  std::size_t workers = 1;  // 0 means one per device
  /// Called after every round, in order.
  std::function<void(const RoundReport&)> on_round;
};

/// One protocol round; `t` is the zero-based round index.
RoundReport run_round(std::size_t t, Experiment& exp, std::size_t workers);

struct MetricTriple {
  double avg = 0.0;
  double best = 0.0;
  double worst = 0.0;
  bool operator==(const MetricTriple&) const = default;
};

MetricTriple aggregate_metrics(std::span<const double> per_device);

struct ExperimentSummary {
  std::uint64_t seed = 0;
  Mode mode = Mode::mlecs;
  std::vector<double> device_f1;
  std::vector<std::size_t> device_modalities;
  MetricTriple f1;
  std::optional<double> server_f1;
  std::vector<std::optional<double>> ccl_curve;  // per-round device means
  std::vector<std::optional<double>> amt_curve;
  std::vector<std::optional<double>> se_llm_curve;
  std::vector<std::optional<double>> se_slm_curve;
  std::uint64_t uplink_params = 0;
  std::uint64_t downlink_params = 0;

  bool operator==(const ExperimentSummary&) const = default;
};

struct ExperimentResult {
  std::vector<RoundReport> rounds;
  ExperimentSummary summary;
  Experiment state;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& opts = {});

/// One JSON object per line, no wall time (byte-identical across replays).
std::string round_record(const RoundReport& report);
std::string summary_json(const ExperimentSummary& summary);

/// Runs the experiment and writes metrics.jsonl, timing.jsonl, summary.json,
/// config.json and adapter checkpoints into `out_dir`.
ExperimentResult run_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                  const RunOptions& opts = {});

}  // namespace mlecs
