#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mlecs/config.hpp"

namespace mlecs {

/// Wire format is float32.
inline constexpr std::uint64_t kBytesPerParam = 4;

/// Σ r·(p+q) over every adapted layer of a backbone built from `spec`.
std::uint64_t analytic_adapter_params(std::size_t token_width, std::size_t vocab, const BackboneSpec& spec,
                                      const LoraSpec& lora);

double comm_ratio(std::uint64_t transmitted, std::uint64_t total);

struct RoundComm {
  std::uint64_t uplink_params = 0;
  std::uint64_t downlink_params = 0;

  std::uint64_t uplink_bytes() const { return uplink_params * kBytesPerParam; }
  std::uint64_t downlink_bytes() const { return downlink_params * kBytesPerParam; }
  bool operator==(const RoundComm&) const = default;
};

/// Per-round traffic. Uplink: adapters plus the modality-count scalar per
/// device. Downlink: adapters plus |D'_j|·d fused floats per device. The
/// FedAvg baseline moves adapters only; standalone moves nothing.
RoundComm round_comm(Mode mode, std::uint64_t adapter_params, const std::vector<std::size_t>& shard_sizes,
                     std::size_t latent_dim);

/// A transformer-sized description used to sanity-check the adapter share of
/// the traffic against a real backbone.
struct ScaleFixture {
  std::string name = "720M decoder, r=8 on q/v";
  std::uint64_t total_params = 720'000'000;
  std::size_t layers = 36;
  std::size_t width = 1280;
  std::size_t adapted_per_layer = 2;  // square width×width projections
  std::size_t rank = 8;
  std::size_t public_shard = 2597;    // fused vectors sent to one device per round
  std::size_t fused_dim = 1280;

  std::uint64_t adapter_params() const;
  std::uint64_t fused_params() const { return static_cast<std::uint64_t>(public_shard) * fused_dim; }
  /// Adapters plus the fused payload, relative to the backbone size.
  double ratio() const;
};

struct CommRow {
  std::string label;
  std::uint64_t device_params = 0;
  std::uint64_t adapter_params = 0;
  std::uint64_t uplink_params = 0;
  std::uint64_t downlink_params = 0;
  double ratio = 0.0;
};

/// Accounting rows for the configured topology (at its rank and at 3× rank)
/// and for the transformer-scale fixture.
std::vector<CommRow> comm_table(const ExperimentConfig& config);
std::string format_comm_table(const std::vector<CommRow>& rows);

}  // namespace mlecs
