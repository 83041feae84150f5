#include "mlecs/server.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mlecs/volume.hpp"

namespace mlecs {

AnchorMap generate_fused_public(const ServerState& server) {
  AnchorMap out;
  for (const auto& s : server.public_train.samples) {
    std::map<ModalityId, Vector> reps;
    for (const auto& [m, x] : s.features) reps.emplace(m, project(server.unified, m, encode(server.unified, m, x)));
    out.emplace(s.id, normalize_or_e1(fuse(server.unified, reps)));
  }
  return out;
}

AggregationWeights mma_weights(std::span<const std::size_t> modality_counts) {
  if (modality_counts.empty()) throw Error("mma_weights: no devices");
  double total = 0.0;
  for (std::size_t j = 0; j < modality_counts.size(); ++j) {
    if (modality_counts[j] < 1) {
      throw Error(fmt::format("mma_weights: device {} reports {} modalities (need >= 1)", j,
                              modality_counts[j]));
    }
    total += static_cast<double>(modality_counts[j]);
  }
  AggregationWeights w;
  for (std::size_t c : modality_counts) w.weights.push_back(static_cast<double>(c) / total);
  return w;
}

AggregationWeights uniform_weights(std::size_t n) {
  if (n == 0) throw Error("uniform_weights: no devices");
  return AggregationWeights{std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

std::vector<LoRAAdapter> mma_aggregate(std::span<const LoRAUpload> uploads,
                                       const AggregationWeights& weights) {
  if (uploads.empty()) throw Error("mma_aggregate: no uploads");
  if (weights.weights.size() != uploads.size()) {
    throw Error(fmt::format("mma_aggregate: {} weights for {} uploads", weights.weights.size(),
                            uploads.size()));
  }
  const auto& ref = uploads.front().adapters;
  for (std::size_t j = 1; j < uploads.size(); ++j) {
    const auto& ads = uploads[j].adapters;
    if (ads.size() != ref.size()) {
      throw Error(fmt::format("mma_aggregate: device {} uploads {} adapters, expected {}",
                              uploads[j].device_id, ads.size(), ref.size()));
    }
    for (std::size_t l = 0; l < ref.size(); ++l) {
      if (ads[l].a.rows() != ref[l].a.rows() || ads[l].a.cols() != ref[l].a.cols() ||
          ads[l].b.rows() != ref[l].b.rows() || ads[l].b.cols() != ref[l].b.cols()) {
        throw Error(fmt::format("mma_aggregate: adapter layer {} of device {} has shape A {} / B {}, "
                                "expected A {} / B {}",
                                l, uploads[j].device_id, ads[l].a.shape(), ads[l].b.shape(),
                                ref[l].a.shape(), ref[l].b.shape()));
      }
    }
  }
  std::vector<LoRAAdapter> out;
  for (std::size_t l = 0; l < ref.size(); ++l) {
    LoRAAdapter agg{Matrix(ref[l].a.rows(), ref[l].a.cols()), Matrix(ref[l].b.rows(), ref[l].b.cols()),
                    ref[l].scale};
    for (std::size_t j = 0; j < uploads.size(); ++j) {
      const double w = weights.weights[j];
      const auto& src = uploads[j].adapters[l];
      for (std::size_t k = 0; k < agg.a.size(); ++k) agg.a.data()[k] += w * src.a.data()[k];
      for (std::size_t k = 0; k < agg.b.size(); ++k) agg.b.data()[k] += w * src.b.data()[k];
    }
    out.push_back(std::move(agg));
  }
  return out;
}

namespace {

std::vector<std::size_t> bin_sizes(std::size_t vocab, std::size_t bins) {
  std::vector<std::size_t> sizes(bins, vocab / bins);
  for (std::size_t k = 0; k < vocab % bins; ++k) ++sizes[k];
  return sizes;
}

void check_bins(std::size_t bins, std::size_t vocab) {
  if (bins < 1 || bins > vocab) {
    throw Error(fmt::format("pooled KT: {} bins invalid for vocab {}", bins, vocab));
  }
}

std::vector<std::size_t> descending_order(std::span<const double> logits) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  return order;
}

}  // namespace

Vector sorted_pool(std::span<const double> logits, std::size_t bins) {
  check_bins(bins, logits.size());
  const auto order = descending_order(logits);
  const auto sizes = bin_sizes(logits.size(), bins);
  Vector pooled(bins, 0.0);
  std::size_t j = 0;
  for (std::size_t k = 0; k < bins; ++k) {
    for (std::size_t i = 0; i < sizes[k]; ++i) pooled[k] += logits[order[j++]];
    pooled[k] /= static_cast<double>(sizes[k]);
  }
  return pooled;
}

double pooled_kt_loss(const LogitSequence& target, const LogitSequence& student, std::size_t bins) {
  check_bins(bins, std::min(target.vocab(), student.vocab()));
  const std::size_t s = std::min(target.length(), student.length());
  double loss = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    loss += kl_divergence(softmax(sorted_pool(target.data.row(i), bins)),
                          softmax(sorted_pool(student.data.row(i), bins)));
  }
  return loss;
}

double pooled_kt_loss_grad(const LogitSequence& target, const LogitSequence& student,
                           std::size_t bins, Matrix& dstudent) {
  check_bins(bins, std::min(target.vocab(), student.vocab()));
  const std::size_t s = std::min(target.length(), student.length());
  dstudent = Matrix(student.length(), student.vocab());
  double loss = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    const Vector p = softmax(sorted_pool(target.data.row(i), bins));
    auto row = student.data.row(i);
    const Vector q = softmax(sorted_pool(row, bins));
    loss += kl_divergence(p, q);
    // ∂KL/∂pooled = q - p, spread evenly over each bin's sorted members.
    const auto order = descending_order(row);
    const auto sizes = bin_sizes(row.size(), bins);
    auto drow = dstudent.row(i);
    std::size_t j = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double g = (q[k] - p[k]) / static_cast<double>(sizes[k]);
      for (std::size_t n = 0; n < sizes[k]; ++n) drow[order[j++]] = g;
    }
  }
  return loss;
}

Matrix slm_prompt(const Backbone& slm, const Matrix& unified_prompt) {
  if (slm.prompt_tokens > unified_prompt.rows()) {
    throw Error(fmt::format("SLM consumes {} prompt tokens but the unified model emits {}",
                            slm.prompt_tokens, unified_prompt.rows()));
  }
  Matrix out(slm.prompt_tokens, unified_prompt.cols());
  std::copy_n(unified_prompt.data().begin(), out.size(), out.data().begin());
  return out;
}

ModalityId draw_anchor_modality(Rng& rng, std::size_t modality_count) {
  std::uniform_int_distribution<std::size_t> pick(0, modality_count - 1);
  return pick(rng);
}

namespace {

struct SeBatchResult {
  double llm = 0.0;
  double slm = 0.0;
};

SeBatchResult se_batch(ServerState& server, const std::vector<std::size_t>& batch,
                       const SeOptions& opts, bool step) {
  auto& model = server.unified;
  const auto& data = server.public_train;
  const std::size_t n_mod = model.shape.modality_count();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const ModalityId anchor = draw_anchor_modality(server.rng, n_mod);

  // Unified-model side: KT target is the SLM's current output.
  std::vector<ForwardTrace> traces;
  std::vector<Matrix> dl;
  ContrastiveBatch cb;
  cb.negative_count = std::min(opts.train.negatives, batch.size());
  SeBatchResult out;
  Matrix dsup, dkt;
  for (std::size_t idx : batch) {
    const auto& s = data.samples[idx];
    traces.push_back(forward(model, s.features));
    const auto& tr = traces.back();
    const LogitSequence slm_logits =
        backbone_forward(server.slm, slm_prompt(server.slm, tr.prompt_tokens), true);
    out.llm += supervised_loss_grad(tr.logits, s.label, dsup) * inv_b;
    out.llm += pooled_kt_loss_grad(slm_logits, tr.logits, opts.kt_bins, dkt) * inv_b;
    for (std::size_t k = 0; k < dsup.size(); ++k) dsup.data()[k] = (dsup.data()[k] + dkt.data()[k]) * inv_b;
    dl.push_back(dsup);
    if (n_mod >= 2) {
      ContrastiveSample cs{tr.modalities.at(anchor).rep, {}};
      for (const auto& [m, mt] : tr.modalities)
        if (m != anchor) cs.others.push_back(mt.rep);
      cb.samples.push_back(std::move(cs));
    }
  }
  ContrastiveGrad cg;
  if (n_mod >= 2) {
    cg = step ? symmetric_contrastive_grad(cb) : ContrastiveGrad{symmetric_contrastive_loss(cb), {}, {}};
    out.llm += cg.loss;
  }
  if (step) {
    ModelGrads grads = ModelGrads::zeros_like(model);
    for (std::size_t v = 0; v < batch.size(); ++v) {
      std::map<ModalityId, Vector> drep;
      if (n_mod >= 2) {
        drep.emplace(anchor, cg.anchors[v]);
        std::size_t k = 0;
        for (const auto& [m, _] : traces[v].modalities)
          if (m != anchor) drep.emplace(m, cg.others[v][k++]);
      }
      backward(model, traces[v], dl[v], drep, kAllTrainable, grads);
    }
    sgd_update(parameter_spans(model, kAllTrainable), gradient_spans(grads, kAllTrainable),
               opts.train.lr);
  }

  // SLM side: KT target is the (updated) unified model's output.
  std::vector<AdapterGrad> agrads = zero_adapter_grads(server.slm);
  for (std::size_t v = 0; v < batch.size(); ++v) {
    const auto& s = data.samples[batch[v]];
    const ForwardTrace tr = step ? forward(model, s.features) : std::move(traces[v]);
    BackboneTrace btr;
    const LogitSequence slm_logits =
        backbone_forward(server.slm, slm_prompt(server.slm, tr.prompt_tokens), true, &btr);
    out.slm += supervised_loss_grad(slm_logits, s.label, dsup) * inv_b;
    out.slm += pooled_kt_loss_grad(tr.logits, slm_logits, opts.kt_bins, dkt) * inv_b;
    if (!step) continue;
    for (std::size_t k = 0; k < dsup.size(); ++k) dsup.data()[k] = (dsup.data()[k] + dkt.data()[k]) * inv_b;
    backbone_backward(server.slm, btr, dsup, &agrads);
  }
  if (step) sgd_update(adapter_spans(server.slm), adapter_grad_spans(agrads), opts.train.lr);
  return out;
}

}  // namespace

SeLosses se_ccl(ServerState& server, const SeOptions& opts) {
  if (server.public_train.empty()) throw Error("se_ccl: empty public training set");
  const std::size_t n = server.public_train.size();
  auto run_epoch = [&](bool step) {
    SeLosses losses;
    for (const auto& batch : make_batches(n, opts.train.batch_size, step ? &server.rng : nullptr)) {
      const auto r = se_batch(server, batch, opts, step);
      losses.llm += r.llm * static_cast<double>(batch.size());
      losses.slm += r.slm * static_cast<double>(batch.size());
    }
    losses.llm /= static_cast<double>(n);
    losses.slm /= static_cast<double>(n);
    return losses;
  };
  if (opts.train.epochs == 0) return run_epoch(false);
  SeLosses last;
  for (std::size_t e = 0; e < opts.train.epochs; ++e) last = run_epoch(true);
  return last;
}

std::vector<LoRAAdapter> distribute_adapters(const ServerState& server) {
  return extract_lora(server.slm);
}

double server_test_f1(const ServerState& server) {
  return evaluate_f1(server.unified, server.public_test);
}

}  // namespace mlecs
