#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mlecs/model.hpp"
#include "mlecs/rng.hpp"

namespace mlecs {

using SampleId = std::uint64_t;
using ModalitySet = std::vector<ModalityId>;  // sorted, unique

struct Sample {
  SampleId id = 0;
  std::size_t label = 0;
  SampleFeatures features;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::size_t modality_count = 0;
  std::size_t classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<SampleId> ids() const;

  bool operator==(const Dataset&) const = default;
};

/// Keeps only the listed modalities of every sample.
Dataset restrict_modalities(const Dataset& data, const ModalitySet& modalities);

/// Latent-factor multimodal classification task: x(m) = W_m z + b_m + σε,
/// label = argmax(C z), z ~ N(0, I).
struct SyntheticTaskSpec {
  std::size_t latent_dim = 6;
  std::size_t classes = 3;
  double noise_std = 0.3;
  std::vector<Matrix> mixing;   // raw_dim(m) × latent_dim
  std::vector<Vector> offsets;  // raw_dim(m)
  Matrix class_matrix;          // classes × latent_dim
  std::size_t sample_count = 0;

  void validate() const;

  /// Gaussian mixing, offsets and class matrix drawn from `rng`.
  static SyntheticTaskSpec random(std::span<const std::size_t> raw_dims, std::size_t latent_dim,
                                  std::size_t classes, double noise_std, std::size_t sample_count,
                                  Rng& rng);
};

/// Omni-modal dataset; sample ids are 0..sample_count-1.
Dataset synth_dataset(const SyntheticTaskSpec& spec, Rng& rng);

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// A quarter of the samples becomes the public set, the remaining three
/// quarters are split evenly (±1) over the devices; every subset is split
/// 90/10 into train/test.
struct Partition {
  DataSplit public_set;
  std::vector<DataSplit> private_sets;
};

Partition partition_data(const Dataset& data, std::size_t n_devices, Rng& rng);

struct ModalityAssignment {
  std::vector<ModalitySet> sets;
  /// The modality forced present on a device whose Bernoulli draws were all empty.
  std::vector<std::optional<ModalityId>> forced;
};

/// Independent Bernoulli(ρ_m) per (device, modality), with one uniformly
/// chosen modality forced present on devices that drew none.
ModalityAssignment assign_modalities(std::size_t n_devices, std::size_t modality_count,
                                     std::span<const double> mer, Rng& rng);

/// Macro-averaged F1 over the classes that occur in the truth or predictions.
double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                std::size_t classes);

/// Reads features from per-modality float32 row files described by a JSON
/// manifest:
///   {"classes": C,
///    "modalities": [{"name": "...", "dim": D, "file": "rel/path.f32"}, ...],
///    "samples": [{"id": 7, "label": 1, "rows": {"<name>": row, ...}}, ...]}
/// Every sample must reference a row in every modality.
struct ExternalDataset {
  std::vector<std::string> modality_names;
  std::vector<std::size_t> dims;
  Dataset data;
};

ExternalDataset load_external_dataset(const std::filesystem::path& manifest);

}  // namespace mlecs
