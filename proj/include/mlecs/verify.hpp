#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mlecs {

struct GradCaseResult {
  std::string family;
  std::size_t index = 0;
  std::size_t parameters = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_err < tolerance; }
};

struct GradSuiteReport {
  std::vector<GradCaseResult> cases;
  double seconds = 0.0;

  bool passed() const;
  /// Worst case of every family, in first-seen order.
  std::vector<GradCaseResult> worst_per_family() const;
  std::string format() const;
};

/// Randomized central-difference checks of every analytic gradient: the
/// volume closed form, both contrastive directions and their mean, pooled
/// KT, and backprop through each trainable group of the unified model.
GradSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t cases_per_family = 12);

}  // namespace mlecs

namespace mlecs {

struct ExperimentConfig;

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast end-to-end sanity pass: the gradient suite, closed-form fixtures of
/// the core math, accounting laws, a checkpoint round trip and a
/// sequential-versus-parallel replay of a shortened run of `config`.
std::vector<SelfCheck> run_selftest(const ExperimentConfig& config, std::size_t workers);

}  // namespace mlecs
