#include "mlecs/training.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace mlecs {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* rng) {
  if (batch_size == 0) throw Error("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng != nullptr) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

double supervised_epoch(UnifiedModel& model, const Dataset& data, TrainableSet trainable,
                        double lr, std::size_t batch_size, Rng* shuffle, bool step) {
  if (data.empty()) throw Error("supervised_epoch: empty dataset");
  double total = 0.0;
  Matrix dlogits;
  for (const auto& batch : make_batches(data.size(), batch_size, shuffle)) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ModelGrads grads = step ? ModelGrads::zeros_like(model) : ModelGrads{};
    for (std::size_t idx : batch) {
      const auto& s = data.samples[idx];
      const ForwardTrace tr = forward(model, s.features);
      total += supervised_loss_grad(tr.logits, s.label, dlogits);
      if (!step) continue;
      for (double& v : dlogits.data()) v *= inv_b;
      backward(model, tr, dlogits, {}, trainable, grads);
    }
    if (step) sgd_update(parameter_spans(model, trainable), gradient_spans(grads, trainable), lr);
  }
  return total / static_cast<double>(data.size());
}

double train_supervised(UnifiedModel& model, const Dataset& data, TrainableSet trainable,
                        const TrainOptions& opts, Rng& rng) {
  if (opts.epochs == 0) return supervised_epoch(model, data, trainable, opts.lr, opts.batch_size, nullptr, false);
  double loss = 0.0;
  for (std::size_t e = 0; e < opts.epochs; ++e)
    loss = supervised_epoch(model, data, trainable, opts.lr, opts.batch_size, &rng, true);
  return loss;
}

std::vector<std::size_t> predict(const UnifiedModel& model, const Dataset& data) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(predict_class(forward(model, s.features).logits, data.classes));
  return out;
}

double evaluate_f1(const UnifiedModel& model, const Dataset& data) {
  std::vector<std::size_t> truth;
  truth.reserve(data.size());
  for (const auto& s : data.samples) truth.push_back(s.label);
  return macro_f1(truth, predict(model, data), data.classes);
}

}  // namespace mlecs
