#pragma once

#include <filesystem>
#include <vector>

#include "midiff/image.hpp"

namespace midiff {

/// Reads 8-bit grayscale PGM (P2 or P5) or PNG, scaled to [0, 1].
Image load_image(const std::filesystem::path& path);

/// Writes 8-bit grayscale; values are clamped to [0, 1] and rounded to the
/// nearest of 256 levels. The format follows the extension (.png, else P5).
void save_image(const Image& img, const std::filesystem::path& path);

/// In-memory PGM codec, used by load_image/save_image.
Image decode_pgm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_pgm(const Image& img);

/// Rounds every value to the 8-bit grid that save_image would store.
Image quantize_8bit(const Image& img);

}  // namespace midiff
