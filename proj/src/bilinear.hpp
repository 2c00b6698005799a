#pragma once

#include <algorithm>
#include <cmath>

#include "pemed/tensor.hpp"

namespace pemed::detail {

// Source sample for one output coordinate under half-pixel alignment.
struct BilinearTap {
  Index lo = 0;
  Index hi = 0;
  double frac = 0.0;
};

inline BilinearTap bilinear_tap(Index out_index, Index in_extent, Index out_extent) {
  const double scale = static_cast<double>(in_extent) / static_cast<double>(out_extent);
  double src = (static_cast<double>(out_index) + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_extent - 1));
  BilinearTap tap;
  tap.lo = static_cast<Index>(std::floor(src));
  tap.hi = std::min(tap.lo + 1, in_extent - 1);
  tap.frac = src - static_cast<double>(tap.lo);
  return tap;
}

}  // namespace pemed::detail
