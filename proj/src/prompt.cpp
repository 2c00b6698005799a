#include "pemed/prompt.hpp"

#include <algorithm>
#include <cmath>

namespace pemed {

std::string_view to_string(Polarity p) { return p == Polarity::Positive ? "positive" : "negative"; }

Polarity parse_polarity(std::string_view text) {
  if (text == "positive") return Polarity::Positive;
  if (text == "negative") return Polarity::Negative;
  throw Error(ErrorCode::InvalidArgument, "polarity must be \"positive\" or \"negative\", got \"" +
                                              std::string(text) + "\"");
}

void check_click_bounds(const Click& click, Index height, Index width) {
  if (click.x < 0 || click.x >= width || click.y < 0 || click.y >= height) {
    throw Error(ErrorCode::OutOfBoundsClick, "click (" + std::to_string(click.x) + "," + std::to_string(click.y) +
                                                 ") outside " + std::to_string(width) + "x" + std::to_string(height));
  }
}

TensorF render_disk_map(std::span<const Click> clicks, Index height, Index width, double radius) {
  if (radius < 0) throw Error(ErrorCode::InvalidArgument, "disk radius must be >= 0");
  TensorF map({1, height, width});
  const double r2 = radius * radius;
  const auto reach = static_cast<Index>(std::floor(radius));
  for (const Click& c : clicks) {
    check_click_bounds(c, height, width);
    const Index y0 = std::max<Index>(0, c.y - reach), y1 = std::min<Index>(height - 1, c.y + reach);
    const Index x0 = std::max<Index>(0, c.x - reach), x1 = std::min<Index>(width - 1, c.x + reach);
    for (Index y = y0; y <= y1; ++y) {
      for (Index x = x0; x <= x1; ++x) {
        const double dy = static_cast<double>(y - c.y), dx = static_cast<double>(x - c.x);
        if (dy * dy + dx * dx <= r2) map[y * width + x] = 1.0f;
      }
    }
  }
  return map;
}

PromptMaps assemble_input(const TensorF& image, std::span<const Click> clicks, const TensorF& prev_mask,
                          double radius) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw Error(ErrorCode::ShapeMismatch, "image must be 1xHxW, got " + to_string(image.shape()));
  }
  require_same_shape(image.shape(), prev_mask.shape(), "assemble_input prev_mask");
  const Index h = image.dim(1), w = image.dim(2);
  std::vector<Click> pos, neg;
  for (const Click& c : clicks) (c.polarity == Polarity::Positive ? pos : neg).push_back(c);
  return PromptMaps{image, render_disk_map(pos, h, w, radius), render_disk_map(neg, h, w, radius), prev_mask};
}

}  // namespace pemed
