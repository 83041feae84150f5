#include "mlecs/device.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mlecs/volume.hpp"

namespace mlecs {

namespace {

// One pass of the CCL objective over the public shard; steps when `shuffle`
// is non-null.
double ccl_epoch(DeviceState& device, const AnchorMap& anchors, const TrainOptions& opts,
                 Rng* shuffle) {
  auto& model = device.model;
  const auto& shard = device.public_shard;
  const bool step = shuffle != nullptr;
  double total = 0.0;
  Matrix dlogits;
  for (const auto& batch : make_batches(shard.size(), opts.batch_size, shuffle)) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<ForwardTrace> traces;
    std::vector<Matrix> dl;
    traces.reserve(batch.size());
    ContrastiveBatch cb;
    cb.negative_count = std::min(opts.negatives, batch.size());
    double sup = 0.0;
    for (std::size_t idx : batch) {
      const auto& s = shard.samples[idx];
      traces.push_back(forward(model, s.features));
      const auto& tr = traces.back();
      sup += supervised_loss_grad(tr.logits, s.label, dlogits) * inv_b;
      for (double& v : dlogits.data()) v *= inv_b;
      dl.push_back(dlogits);
      ContrastiveSample cs{anchors.at(s.id), {}};
      for (const auto& [m, mt] : tr.modalities) cs.others.push_back(mt.rep);
      cb.samples.push_back(std::move(cs));
    }
    // Anchors are constants: their gradient is computed and dropped.
    const ContrastiveGrad cg =
        step ? symmetric_contrastive_grad(cb) : ContrastiveGrad{symmetric_contrastive_loss(cb), {}, {}};
    total += (sup + cg.loss) * static_cast<double>(batch.size());
    if (!step) continue;
    ModelGrads grads = ModelGrads::zeros_like(model);
    for (std::size_t v = 0; v < batch.size(); ++v) {
      std::map<ModalityId, Vector> drep;
      std::size_t k = 0;
      for (const auto& [m, _] : traces[v].modalities) drep.emplace(m, cg.others[v][k++]);
      backward(model, traces[v], dl[v], drep, kCclTrainable, grads);
    }
    sgd_update(parameter_spans(model, kCclTrainable), gradient_spans(grads, kCclTrainable), opts.lr);
  }
  return total / static_cast<double>(shard.size());
}

}  // namespace

double run_ccl(DeviceState& device, const AnchorMap& anchors, const TrainOptions& opts) {
  if (device.public_shard.empty()) throw Error(fmt::format("device {}: empty public shard", device.id));
  for (const auto& s : device.public_shard.samples) {
    if (!anchors.contains(s.id)) {
      throw Error(fmt::format("device {}: no anchor for public sample {}", device.id, s.id));
    }
  }
  if (opts.epochs == 0) return ccl_epoch(device, anchors, opts, nullptr);
  double loss = 0.0;
  for (std::size_t e = 0; e < opts.epochs; ++e) loss = ccl_epoch(device, anchors, opts, &device.rng);
  return loss;
}

double run_amt(DeviceState& device, const TrainOptions& opts) {
  if (device.private_train.empty()) {
    throw Error(fmt::format("device {}: empty private training set", device.id));
  }
  return train_supervised(device.model, device.private_train, kAmtTrainable, opts, device.rng);
}

LoRAUpload make_upload(const DeviceState& device) {
  return LoRAUpload{device.id, extract_lora(device.model.backbone), device.modalities.size()};
}

void apply_server_adapters(DeviceState& device, std::span<const LoRAAdapter> adapters) {
  apply_lora(device.model.backbone, adapters);
}

}  // namespace mlecs
