#pragma once

#include <cstdint>
#include <vector>

#include "ucs/image.hpp"

namespace ucs {

/// Piecewise-smooth test image in [0, 1]: a shaded background, a few
/// constant rectangles and discs, and a low-amplitude oriented texture.
/// Deterministic in (h, w, seed).
Image synthetic_image(std::size_t h, std::size_t w, std::uint64_t seed);

/// `count` patches of size x size cut from synthetic images, seeds
/// seed, seed + 1, ...
std::vector<Image> synthetic_patches(std::size_t count, std::size_t size, std::uint64_t seed);

}  // namespace ucs
