#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pemed/tensor.hpp"

namespace pemed {

enum class Polarity { Positive, Negative };

std::string_view to_string(Polarity p);
/// Accepts "positive" / "negative"; throws INVALID_ARGUMENT otherwise.
Polarity parse_polarity(std::string_view text);

/// A user click at column x, row y. t is the 1-based interaction index.
struct Click {
  Index x = 0;
  Index y = 0;
  Polarity polarity = Polarity::Positive;
  int t = 0;

  friend bool operator==(const Click&, const Click&) = default;
};

inline constexpr double kDefaultDiskRadius = 5.0;

/// The four network input planes, each 1 x H x W.
struct PromptMaps {
  TensorF image;
  TensorF pos;
  TensorF neg;
  TensorF prev;

  Index height() const { return image.dim(1); }
  Index width() const { return image.dim(2); }
};

/// Throws OUT_OF_BOUNDS_CLICK unless 0 <= x < width and 0 <= y < height.
void check_click_bounds(const Click& click, Index height, Index width);

/// Union of closed disks of the given radius around every click, as a
/// 1 x H x W map of zeros and ones.
TensorF render_disk_map(std::span<const Click> clicks, Index height, Index width, double radius = kDefaultDiskRadius);

/// Splits clicks by polarity into disk maps and bundles them with the image
/// and previous mask. Both inputs must be 1 x H x W.
PromptMaps assemble_input(const TensorF& image, std::span<const Click> clicks, const TensorF& prev_mask,
                          double radius = kDefaultDiskRadius);

}  // namespace pemed
