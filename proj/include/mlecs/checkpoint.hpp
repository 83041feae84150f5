#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mlecs/model.hpp"

namespace mlecs {

/// Adapter checkpoint: a text manifest (layer order, shapes, rank, scale,
/// seed) terminated by a `payload f32le` line, then each adapter's A and B as
/// row-major little-endian float32 in manifest order.
struct AdapterCheckpoint {
  std::uint64_t seed = 0;
  std::vector<std::size_t> layers;  // backbone layer index of each adapter
  std::vector<LoRAAdapter> adapters;
};

AdapterCheckpoint checkpoint_from(const Backbone& backbone, std::uint64_t seed);

void write_checkpoint(const std::filesystem::path& path, const AdapterCheckpoint& ckpt);
AdapterCheckpoint read_checkpoint(const std::filesystem::path& path);

/// Rounds every adapter entry to float32, matching what a checkpoint stores.
std::vector<LoRAAdapter> round_to_f32(std::vector<LoRAAdapter> adapters);

}  // namespace mlecs
