#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "diffseg/tensor.hpp"

namespace diffseg {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
/// Seed for a named subsystem, stable across releases.
std::uint64_t derive_seed(std::uint64_t root, std::string_view subsystem);

Tensor randn(Shape shape, Rng& rng);
double standard_normal(Rng& rng);
double uniform01(Rng& rng);
/// Uniform integer in [lo, hi].
int uniform_int(Rng& rng, int lo, int hi);

}  // namespace diffseg
