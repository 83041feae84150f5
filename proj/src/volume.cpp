#include "mlecs/volume.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace mlecs {

void RepresentationSet::validate() const {
  if (vectors.empty()) throw Error("RepresentationSet: at least one vector required");
  const std::size_t d = vectors.front().size();
  if (d == 0) throw Error("RepresentationSet: zero-length vectors");
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != d) {
      throw Error(fmt::format("RepresentationSet: vector {} has length {}, expected {}", i,
                              vectors[i].size(), d));
    }
    if (!all_finite(vectors[i])) {
      throw Error(fmt::format("RepresentationSet: vector {} has non-finite entries", i));
    }
  }
}

double vector_volume(const RepresentationSet& set) {
  set.validate();
  if (set.vectors.size() > set.dim()) return 0.0;
  const Matrix a = Matrix::from_columns(set.vectors);
  return std::sqrt(std::max(det(gram(a)), 0.0));
}

std::vector<Vector> volume_gradient(const RepresentationSet& set, double eps) {
  set.validate();
  const std::size_t k = set.vectors.size();
  const std::size_t d = set.dim();
  std::vector<Vector> grads(k, Vector(d, 0.0));
  if (k > d) return grads;
  const Matrix a = Matrix::from_columns(set.vectors);
  const Matrix g = gram(a);
  const double volume = std::sqrt(std::max(det(g), 0.0));
  if (volume == 0.0) return grads;
  const Matrix dv = matmul(a, inverse_regularized(g, eps));
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t r = 0; r < d; ++r) grads[c][r] = volume * dv(r, c);
  return grads;
}

void ContrastiveBatch::validate() const {
  if (samples.empty()) throw Error("ContrastiveBatch: empty batch");
  if (negative_count < 1) throw Error("ContrastiveBatch: negative count must be >= 1");
  if (negative_count > samples.size()) {
    throw Error(fmt::format("ContrastiveBatch: negative count {} exceeds batch size {}",
                            negative_count, samples.size()));
  }
  for (std::size_t v = 0; v < samples.size(); ++v) {
    if (samples[v].others.empty()) {
      throw Error(fmt::format("ContrastiveBatch: sample {} has no non-anchor representation", v));
    }
  }
}

namespace {

enum class Direction { o2a, a2o };

ContrastiveGrad contrastive_impl(const ContrastiveBatch& batch, Direction dir, bool with_grad,
                                 double eps) {
  batch.validate();
  const std::size_t n = batch.samples.size();
  const std::size_t u_count = batch.negative_count;
  ContrastiveGrad out;
  if (with_grad) {
    out.anchors.reserve(n);
    out.others.reserve(n);
    for (const auto& s : batch.samples) {
      out.anchors.emplace_back(s.anchor.size(), 0.0);
      std::vector<Vector> o;
      for (const auto& rep : s.others) o.emplace_back(rep.size(), 0.0);
      out.others.push_back(std::move(o));
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  Vector scores(u_count);
  std::vector<RepresentationSet> sets(u_count);
  std::vector<std::size_t> anchor_of(u_count), others_of(u_count);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < u_count; ++c) {
      const std::size_t u = (v + c) % n;
      anchor_of[c] = dir == Direction::o2a ? v : u;
      others_of[c] = dir == Direction::o2a ? u : v;
      auto& set = sets[c].vectors;
      set.clear();
      set.push_back(batch.samples[anchor_of[c]].anchor);
      const auto& others = batch.samples[others_of[c]].others;
      set.insert(set.end(), others.begin(), others.end());
      scores[c] = -vector_volume(sets[c]);
    }
    const Vector logp = log_softmax(scores);
    out.loss += -logp[0] * inv_n;
    if (!with_grad) continue;
    for (std::size_t c = 0; c < u_count; ++c) {
      // d(-log p_0)/d score_c = p_c - [c == 0]; d score_c / d set = -dV.
      const double dscore = std::exp(logp[c]) - (c == 0 ? 1.0 : 0.0);
      if (dscore == 0.0) continue;
      const auto dv = volume_gradient(sets[c], eps);
      const double w = -dscore * inv_n;
      auto& ga = out.anchors[anchor_of[c]];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += w * dv[0][i];
      auto& go = out.others[others_of[c]];
      for (std::size_t m = 0; m < go.size(); ++m)
        for (std::size_t i = 0; i < go[m].size(); ++i) go[m][i] += w * dv[m + 1][i];
    }
  }
  return out;
}

}  // namespace

double contrastive_loss_o2a(const ContrastiveBatch& batch) {
  return contrastive_impl(batch, Direction::o2a, false, 0.0).loss;
}

double contrastive_loss_a2o(const ContrastiveBatch& batch) {
  return contrastive_impl(batch, Direction::a2o, false, 0.0).loss;
}

double symmetric_contrastive_loss(const ContrastiveBatch& batch) {
  return 0.5 * (contrastive_loss_a2o(batch) + contrastive_loss_o2a(batch));
}

ContrastiveGrad contrastive_o2a_grad(const ContrastiveBatch& batch, double eps) {
  return contrastive_impl(batch, Direction::o2a, true, eps);
}

ContrastiveGrad contrastive_a2o_grad(const ContrastiveBatch& batch, double eps) {
  return contrastive_impl(batch, Direction::a2o, true, eps);
}

ContrastiveGrad symmetric_contrastive_grad(const ContrastiveBatch& batch, double eps) {
  auto a = contrastive_a2o_grad(batch, eps);
  const auto b = contrastive_o2a_grad(batch, eps);
  a.loss = 0.5 * (a.loss + b.loss);
  for (std::size_t v = 0; v < a.anchors.size(); ++v) {
    for (std::size_t i = 0; i < a.anchors[v].size(); ++i)
      a.anchors[v][i] = 0.5 * (a.anchors[v][i] + b.anchors[v][i]);
    for (std::size_t m = 0; m < a.others[v].size(); ++m)
      for (std::size_t i = 0; i < a.others[v][m].size(); ++i)
        a.others[v][m][i] = 0.5 * (a.others[v][m][i] + b.others[v][m][i]);
  }
  return a;
}

}  // namespace mlecs
