#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mlecs/data.hpp"
#include "mlecs/device.hpp"
#include "mlecs/model.hpp"
#include "mlecs/training.hpp"

namespace mlecs {

struct ServerState {
  UnifiedModel unified;  // LLM-scale backbone, every modality
  Backbone slm;          // same topology as every device backbone
  Dataset public_train;
  Dataset public_test;
  Rng rng;
};

struct AggregationWeights {
  std::vector<double> weights;
};

/// Fused representation of every public training sample, L2-normalized.
AnchorMap generate_fused_public(const ServerState& server);

/// w_j = |M_j| / Σ|M_i|.
AggregationWeights mma_weights(std::span<const std::size_t> modality_counts);
AggregationWeights uniform_weights(std::size_t n);

/// Per layer, A = Σ w_j A_j and B = Σ w_j B_j.
std::vector<LoRAAdapter> mma_aggregate(std::span<const LoRAUpload> uploads,
                                       const AggregationWeights& weights);

/// Sorts each position's logits descending and average-pools them into
/// `bins`; remainder entries go to the leading bins.
Vector sorted_pool(std::span<const double> logits, std::size_t bins);

/// Σ over the first min(S_target, S_student) positions of
/// KL(softmax(pool(target)) || softmax(pool(student))).
double pooled_kt_loss(const LogitSequence& target, const LogitSequence& student, std::size_t bins);
/// Same loss; also writes ∂loss/∂student logits (target is a constant).
double pooled_kt_loss_grad(const LogitSequence& target, const LogitSequence& student,
                           std::size_t bins, Matrix& dstudent);

/// Leading `slm.prompt_tokens` rows of the unified model's soft prompt.
Matrix slm_prompt(const Backbone& slm, const Matrix& unified_prompt);

struct SeOptions {
  TrainOptions train;
  std::size_t kt_bins = 4;
};

struct SeLosses {
  double llm = 0.0;
  double slm = 0.0;
};

/// Alternating per-minibatch optimization of the unified model (contrastive
/// with a randomly drawn anchor modality, supervised, KT toward the SLM) and of
/// the SLM adapters (supervised, KT toward the unified model). Returns the
/// last epoch's mean losses; epochs == 0 evaluates once without updates.
SeLosses se_ccl(ServerState& server, const SeOptions& opts);

/// Uniform draw of the anchor modality from the universe.
ModalityId draw_anchor_modality(Rng& rng, std::size_t modality_count);

std::vector<LoRAAdapter> distribute_adapters(const ServerState& server);

/// Test macro-F1 of the unified model on the public test set.
double server_test_f1(const ServerState& server);

}  // namespace mlecs
