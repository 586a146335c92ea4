#pragma once

#include <cstdint>
#include <random>

#include "midiff/image.hpp"

namespace midiff {

using Rng = std::mt19937_64;

/// Independent, reproducible stream `stream` derived from a base seed.
Rng make_stream(std::uint64_t seed, std::uint64_t stream = 0);

/// Image of i.i.d. standard normal draws.
Image standard_normal(int height, int width, Rng& rng);

double standard_normal(Rng& rng);

double uniform(Rng& rng, double lo, double hi);

}  // namespace midiff
