#pragma once

#include <cstddef>
#include <vector>

#include "mlecs/numeric.hpp"

namespace mlecs {

/// A set of equal-length representation vectors (one per modality, plus the
/// anchor where applicable).
struct RepresentationSet {
  std::vector<Vector> vectors;

  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
  /// Throws on an empty set, ragged lengths, or non-finite entries.
  void validate() const;
};

/// √max(det(AᵀA), 0) over the column-stacked set. Sets with more vectors than
/// dimensions are linearly dependent and return 0 directly.
double vector_volume(const RepresentationSet& set);

/// ∂V/∂vᵢ for every vector, from ∂V/∂A = V · A · (G + eps·I)⁻¹.
std::vector<Vector> volume_gradient(const RepresentationSet& set, double eps = 1e-8);

struct ContrastiveSample {
  Vector anchor;
  std::vector<Vector> others;  // non-anchor modality reps, fixed modality order
};

/// Candidates for sample v are v itself followed by the next
/// negative_count - 1 samples in batch order (cyclic).
struct ContrastiveBatch {
  std::vector<ContrastiveSample> samples;
  std::size_t negative_count = 1;

  void validate() const;
};

/// Gradient of a batch-mean contrastive loss with respect to every anchor and
/// every non-anchor representation in the batch.
struct ContrastiveGrad {
  double loss = 0.0;
  std::vector<Vector> anchors;
  std::vector<std::vector<Vector>> others;
};

/// Anchor fixed, non-anchor sets of other samples as negatives.
double contrastive_loss_o2a(const ContrastiveBatch& batch);
/// Non-anchor set fixed, anchors of other samples as negatives.
double contrastive_loss_a2o(const ContrastiveBatch& batch);
/// ½(a2o + o2a).
double symmetric_contrastive_loss(const ContrastiveBatch& batch);

ContrastiveGrad contrastive_o2a_grad(const ContrastiveBatch& batch, double eps = 1e-8);
ContrastiveGrad contrastive_a2o_grad(const ContrastiveBatch& batch, double eps = 1e-8);
ContrastiveGrad symmetric_contrastive_grad(const ContrastiveBatch& batch, double eps = 1e-8);

}  // namespace mlecs
