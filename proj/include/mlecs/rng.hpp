#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mlecs {

using Rng = std::mt19937_64;

/// Stable per-entity seed from (master seed, role, id). Streams derived this
/// way do not depend on the order in which entities are scheduled.
std::uint64_t derive_seed(std::uint64_t master, std::string_view role, std::uint64_t id = 0);

inline Rng make_rng(std::uint64_t master, std::string_view role, std::uint64_t id = 0) {
  return Rng(derive_seed(master, role, id));
}

}  // namespace mlecs
