#pragma once

// Mask metrics and the simulated clicker. Masks are 1 x H x W or H x W
// tensors; any value >= 0.5 counts as foreground.

#include <vector>

#include "pemed/prompt.hpp"

namespace pemed {

/// 2|A and B| / (|A| + |B|), 1.0 when both are empty. Throws SHAPE_MISMATCH.
double dsc(const TensorF& pred, const TensorF& gt);

struct Pixel {
  Index row = 0;
  Index col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Pixels in row-major order, so front() is the minimum pixel.
using Component = std::vector<Pixel>;

/// 4-connected components, largest first; equal sizes are ordered by their
/// minimum pixel.
std::vector<Component> connected_components(const TensorF& mask);

/// Squared Euclidean distance from every pixel of the component to the
/// nearest pixel outside it; the area beyond the image border counts as
/// outside. Returned in the component's pixel order.
std::vector<double> interior_distance_sq(const Component& component, Index height, Index width);

/// Component pixel with the greatest interior distance, smallest (row, col)
/// on ties.
Pixel interior_point(const Component& component, Index height, Index width);

/// Largest error region, then its interior point. False negatives and false
/// positives form separate regions, so the polarity is well defined. Throws
/// NO_ERROR_REGION when pred == gt.
Click next_click(const TensorF& pred, const TensorF& gt);

}  // namespace pemed
