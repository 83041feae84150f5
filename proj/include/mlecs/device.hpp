#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "mlecs/data.hpp"
#include "mlecs/model.hpp"
#include "mlecs/training.hpp"

namespace mlecs {

/// Fused omni-modal anchors keyed by public sample id.
using AnchorMap = std::map<SampleId, Vector>;

struct DeviceState {
  std::size_t id = 0;
  ModalitySet modalities;
  UnifiedModel model;
  Dataset private_train;
  Dataset private_test;
  Dataset public_shard;  // public train set restricted to `modalities`
  Rng rng;
};

struct LoRAUpload {
  std::size_t device_id = 0;
  std::vector<LoRAAdapter> adapters;
  std::size_t modality_count = 1;
};

/// Contrastive alignment against server anchors plus supervised loss on the
/// public shard. Trains projectors, fusion, soft-prompt generator and adapters;
/// encoders stay frozen. Returns the last epoch's mean combined loss.
double run_ccl(DeviceState& device, const AnchorMap& anchors, const TrainOptions& opts);

/// Supervised tuning on the private shard; trains encoders and adapters only.
double run_amt(DeviceState& device, const TrainOptions& opts);

LoRAUpload make_upload(const DeviceState& device);

void apply_server_adapters(DeviceState& device, std::span<const LoRAAdapter> adapters);

}  // namespace mlecs
