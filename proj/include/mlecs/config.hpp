#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlecs/model.hpp"

namespace mlecs {

enum class Mode { mlecs, standalone, fedavg_uniform, mlecs_wo_mma, mlecs_wo_seccl };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

struct SyntheticDataConfig {
  std::size_t latent_dim = 6;
  std::size_t classes = 3;
  double noise_std = 0.5;
  std::size_t sample_count = 9600;
  bool operator==(const SyntheticDataConfig&) const = default;
};

struct DatasetConfig {
  SyntheticDataConfig synthetic;
  std::string path;  // external manifest; empty means synthetic
  bool operator==(const DatasetConfig&) const = default;
};

struct EpochConfig {
  std::size_t ccl = 2;
  std::size_t amt = 2;
  std::size_t se = 2;
  bool operator==(const EpochConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  Mode mode = Mode::mlecs;
  std::size_t n_devices = 3;
  std::size_t rounds = 5;
  std::vector<std::string> modalities{"vision", "audio", "text"};
  std::vector<double> mer{0.5};  // one rate, or one per modality
  ModelShape shape;
  BackboneSpec slm{16, 2, 2};
  BackboneSpec llm{32, 3, 3};
  LoraSpec lora;
  std::size_t negatives = 8;
  std::size_t batch_size = 16;
  double lr = 0.1;
  EpochConfig epochs;
  std::size_t kt_bins = 4;
  DatasetConfig dataset;

  ExperimentConfig();

  std::size_t modality_count() const { return modalities.size(); }
  /// ρ per modality, broadcasting a single rate.
  std::vector<double> mer_per_modality() const;
  /// Throws on any invariant violation.
  void validate() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses a JSON config file, applies dotted-key overrides (`a.b=value`, last
/// writer wins), fills defaults, rejects unknown keys and validates.
ExperimentConfig parse_config(const std::filesystem::path& path,
                              const std::vector<std::string>& overrides = {});
/// Same, from in-memory text; `origin` names the source in errors.
ExperimentConfig parse_config_text(std::string_view text, const std::vector<std::string>& overrides = {},
                                   std::string_view origin = "<config>");
std::string serialize_config(const ExperimentConfig& config);

}  // namespace mlecs
