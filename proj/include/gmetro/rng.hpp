#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gmetro {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a bijection on 64-bit words with good avalanche.
std::uint64_t mix_seed(std::uint64_t x);

/// Child seed for a path of indices below a root seed. Distinct paths give
/// statistically independent streams, so work can be scheduled in any order.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(root, path));
}

}  // namespace gmetro
