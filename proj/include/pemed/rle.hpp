#pragma once

// Mask wire format: "H,W|start,len;start,len" listing runs of 1-pixels over
// the row-major flattening, 0-indexed. An empty mask has nothing after '|'.

#include <string>
#include <string_view>

#include "pemed/tensor.hpp"

namespace pemed {

/// mask is 1 x H x W or H x W; values >= 0.5 are foreground.
std::string encode_mask_rle(const TensorF& mask);

/// Inverse of encode_mask_rle as a 1 x H x W tensor of zeros and ones.
/// Throws DECODE_ERROR on malformed, overlapping, unordered or out-of-range runs.
TensorF decode_mask_rle(std::string_view text);

}  // namespace pemed
