#pragma once

#include <span>
#include <string>
#include <string_view>

#include "pemed/image_io.hpp"

namespace pemed {

/// Standard alphabet with '=' padding.
std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Accepts padded or unpadded input; ASCII whitespace is ignored. Throws
/// DECODE_ERROR on characters outside the alphabet or a bad length.
Bytes base64_decode(std::string_view text);

}  // namespace pemed
