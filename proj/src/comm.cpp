#include "mlecs/comm.hpp"

#include <numeric>

#include <fmt/format.h>

namespace mlecs {

std::uint64_t analytic_adapter_params(std::size_t token_width, std::size_t vocab, const BackboneSpec& spec,
                                      const LoraSpec& lora) {
  std::uint64_t n = 0;
  std::size_t in = token_width;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    n += lora_parameter_count(spec.hidden, in, lora.rank);
    in = spec.hidden;
  }
  if (lora.on_head) n += lora_parameter_count(vocab, in, lora.rank);
  return n;
}

double comm_ratio(std::uint64_t transmitted, std::uint64_t total) {
  if (total == 0) throw Error("comm_ratio: total parameter count is zero");
  return static_cast<double>(transmitted) / static_cast<double>(total);
}

RoundComm round_comm(Mode mode, std::uint64_t adapter_params, const std::vector<std::size_t>& shard_sizes,
                     std::size_t latent_dim) {
  const std::uint64_t n = shard_sizes.size();
  switch (mode) {
    case Mode::standalone:
      return {};
    case Mode::fedavg_uniform:
      return {n * adapter_params, n * adapter_params};
    default: {
      RoundComm c;
      c.uplink_params = n * (adapter_params + 1);
      for (std::size_t s : shard_sizes) c.downlink_params += adapter_params + static_cast<std::uint64_t>(s) * latent_dim;
      return c;
    }
  }
}

std::uint64_t ScaleFixture::adapter_params() const {
  return static_cast<std::uint64_t>(layers) * adapted_per_layer * lora_parameter_count(width, width, rank);
}

double ScaleFixture::ratio() const { return comm_ratio(adapter_params() + fused_params(), total_params); }

std::vector<CommRow> comm_table(const ExperimentConfig& config) {
  const auto& shape = config.shape;
  // Everything on an omni-modal device except the adapters.
  std::uint64_t base = 0;
  for (std::size_t raw : shape.raw_dims) {
    base += raw * shape.encoder_hidden + shape.encoder_hidden;
    base += shape.encoder_hidden * shape.feature_dim + shape.feature_dim;
    base += shape.feature_dim * shape.latent_dim + shape.latent_dim;
  }
  const std::size_t fusion_in = shape.modality_count() * shape.latent_dim;
  base += fusion_in * shape.fusion_hidden + shape.fusion_hidden;
  base += shape.fusion_hidden * shape.latent_dim + shape.latent_dim;
  const std::size_t prompt_out = config.slm.prompt_tokens * shape.token_width;
  base += shape.latent_dim * shape.prompt_hidden + shape.prompt_hidden;
  base += shape.prompt_hidden * prompt_out + prompt_out;
  std::size_t in = shape.token_width;
  for (std::size_t l = 0; l < config.slm.layers; ++l) {
    base += in * config.slm.hidden + config.slm.hidden;
    in = config.slm.hidden;
  }
  base += in * shape.vocab + shape.vocab;

  // Shard sizes are only known after partitioning; use the expected public
  // share of an omni-modal device.
  const std::size_t samples = config.dataset.synthetic.sample_count;
  const std::size_t public_train = (samples / 4) - (samples / 4) / 10;

  std::vector<CommRow> rows;
  for (std::size_t mult : {std::size_t{1}, std::size_t{3}}) {
    LoraSpec lora = config.lora;
    lora.rank *= mult;
    const std::uint64_t adapters =
        analytic_adapter_params(shape.token_width, shape.vocab, config.slm, lora);
    CommRow row;
    row.label = fmt::format("configured, r={}", lora.rank);
    row.device_params = base + adapters;
    row.adapter_params = adapters;
    row.uplink_params = adapters + 1;
    row.downlink_params = adapters + static_cast<std::uint64_t>(public_train) * shape.latent_dim;
    row.ratio = comm_ratio(row.uplink_params, row.device_params);
    rows.push_back(row);
  }
  const ScaleFixture fx;
  CommRow row;
  row.label = fx.name;
  row.device_params = fx.total_params;
  row.adapter_params = fx.adapter_params();
  row.uplink_params = fx.adapter_params() + 1;
  row.downlink_params = fx.adapter_params() + fx.fused_params();
  row.ratio = fx.ratio();
  rows.push_back(row);
  return rows;
}

std::string format_comm_table(const std::vector<CommRow>& rows) {
  std::string out = fmt::format("{:<28} {:>14} {:>12} {:>12} {:>14} {:>14} {:>10}\n", "topology", "device_params",
                                "adapters", "uplink", "uplink_bytes", "downlink", "ratio");
  for (const auto& r : rows) {
    out += fmt::format("{:<28} {:>14} {:>12} {:>12} {:>14} {:>14} {:>9.4f}%\n", r.label, r.device_params,
                       r.adapter_params, r.uplink_params, r.uplink_params * kBytesPerParam, r.downlink_params,
                       100.0 * r.ratio);
  }
  return out;
}

}  // namespace mlecs
