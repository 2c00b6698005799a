#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pemed/tensor.hpp"

namespace pemed {

enum class ImageFormat { Pgm, Png8 };

using Bytes = std::vector<std::uint8_t>;

/// Identifies PGM (P5) or PNG by magic bytes; UNSUPPORTED_FORMAT otherwise.
ImageFormat detect_format(std::span<const std::uint8_t> bytes);

/// Decodes an 8-bit grayscale image into a 1 x H x W tensor scaled by 1/255.
/// Truncated or malformed data raises DECODE_ERROR.
TensorF load_image(std::span<const std::uint8_t> bytes, ImageFormat format);
TensorF load_image(std::span<const std::uint8_t> bytes);

/// Quantizes a 1 x H x W tensor in [0,1] to 8 bits (round-to-nearest, clamped).
Bytes encode_pgm(const TensorF& image);
Bytes encode_png(const TensorF& image);

/// Bilinear resize of a 1 x H x W tensor.
TensorF resize_bilinear(const TensorF& image, Index height, Index width);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace pemed
