#pragma once

#include <cstddef>
#include <vector>

#include "mlecs/data.hpp"
#include "mlecs/model.hpp"

namespace mlecs {

struct TrainOptions {
  std::size_t epochs = 1;
  double lr = 0.05;
  std::size_t batch_size = 16;
  std::size_t negatives = 8;  // U; clamped to the size of a short final batch
};

/// Index batches over [0, n). Shuffled with `rng` when non-null.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* rng);

/// One pass of mean cross-entropy minimization over `data`. With `step`
/// false the model is only evaluated. Returns the sample-weighted mean loss.
double supervised_epoch(UnifiedModel& model, const Dataset& data, TrainableSet trainable,
                        double lr, std::size_t batch_size, Rng* shuffle, bool step);

/// `epochs` supervised epochs; epochs == 0 runs a single evaluation pass.
double train_supervised(UnifiedModel& model, const Dataset& data, TrainableSet trainable,
                        const TrainOptions& opts, Rng& rng);

/// Predicted classes for every sample of `data`.
std::vector<std::size_t> predict(const UnifiedModel& model, const Dataset& data);
double evaluate_f1(const UnifiedModel& model, const Dataset& data);

}  // namespace mlecs
