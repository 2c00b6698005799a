#include "pemed/metrics.hpp"

#include <algorithm>
#include <limits>

#include "pemed/error.hpp"

namespace pemed {

namespace {

struct Grid {
  Index height;
  Index width;
};

Grid mask_grid(const TensorF& mask) {
  if (mask.rank() == 3 && mask.dim(0) == 1) return {mask.dim(1), mask.dim(2)};
  if (mask.rank() == 2) return {mask.dim(0), mask.dim(1)};
  throw Error(ErrorCode::ShapeMismatch, "mask must be HxW or 1xHxW, got " + to_string(mask.shape()));
}

bool on(float v) { return v >= 0.5f; }

std::vector<Component> label(const std::vector<unsigned char>& fg, Grid g) {
  std::vector<Component> out;
  std::vector<unsigned char> seen(fg.size(), 0);
  std::vector<Index> stack;
  for (Index start = 0; start < g.height * g.width; ++start) {
    if (!fg[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) continue;
    Component comp;
    stack.assign(1, start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const Index i = stack.back();
      stack.pop_back();
      const Index r = i / g.width, c = i % g.width;
      comp.push_back({r, c});
      auto visit = [&](Index rr, Index cc) {
        if (rr < 0 || cc < 0 || rr >= g.height || cc >= g.width) return;
        const auto j = static_cast<std::size_t>(rr * g.width + cc);
        if (fg[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(static_cast<Index>(j));
        }
      };
      visit(r - 1, c);
      visit(r + 1, c);
      visit(r, c - 1);
      visit(r, c + 1);
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  // Discovery order is by minimum pixel already; a stable sort keeps it for ties.
  std::stable_sort(out.begin(), out.end(), [](const Component& a, const Component& b) { return a.size() > b.size(); });
  return out;
}

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas). f uses +inf for "no site".
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<Index>& v, std::vector<double>& z) {
  const auto n = static_cast<Index>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  d.assign(f.size(), inf);
  v.assign(f.size(), 0);
  z.assign(f.size() + 1, 0.0);
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const Index p = v[static_cast<std::size_t>(k)];
      s = ((f[static_cast<std::size_t>(q)] + static_cast<double>(q * q)) -
           (f[static_cast<std::size_t>(p)] + static_cast<double>(p * p))) /
          static_cast<double>(2 * (q - p));
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  if (k < 0) return;
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(q)) ++j;
    const Index p = v[static_cast<std::size_t>(j)];
    d[static_cast<std::size_t>(q)] = static_cast<double>((q - p) * (q - p)) + f[static_cast<std::size_t>(p)];
  }
}

}  // namespace

double dsc(const TensorF& pred, const TensorF& gt) {
  require_same_shape(pred.shape(), gt.shape(), "dsc");
  std::int64_t inter = 0, a = 0, b = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool p = on(pred[i]), g = on(gt[i]);
    a += p;
    b += g;
    inter += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::vector<Component> connected_components(const TensorF& mask) {
  const Grid g = mask_grid(mask);
  std::vector<unsigned char> fg(static_cast<std::size_t>(mask.size()));
  for (Index i = 0; i < mask.size(); ++i) fg[static_cast<std::size_t>(i)] = on(mask[i]);
  return label(fg, g);
}

std::vector<double> interior_distance_sq(const Component& component, Index height, Index width) {
  // Work on the bounding box padded by one pixel of background, which also
  // stands in for everything beyond the image border.
  Index r0 = height, r1 = -1, c0 = width, c1 = -1;
  for (const Pixel& p : component) {
    if (p.row < 0 || p.col < 0 || p.row >= height || p.col >= width) {
      throw Error(ErrorCode::InvalidArgument, "component pixel outside the image");
    }
    r0 = std::min(r0, p.row);
    r1 = std::max(r1, p.row);
    c0 = std::min(c0, p.col);
    c1 = std::max(c1, p.col);
  }
  if (component.empty()) return {};
  const Index bh = r1 - r0 + 3, bw = c1 - c0 + 3;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Sites are background pixels: distance 0 there, +inf inside.
  std::vector<double> grid(static_cast<std::size_t>(bh * bw), 0.0);
  for (const Pixel& p : component) {
    grid[static_cast<std::size_t>((p.row - r0 + 1) * bw + (p.col - c0 + 1))] = inf;
  }
  std::vector<double> f, d, z;
  std::vector<Index> v;
  for (Index c = 0; c < bw; ++c) {
    f.resize(static_cast<std::size_t>(bh));
    for (Index r = 0; r < bh; ++r) f[static_cast<std::size_t>(r)] = grid[static_cast<std::size_t>(r * bw + c)];
    edt_1d(f, d, v, z);
    for (Index r = 0; r < bh; ++r) grid[static_cast<std::size_t>(r * bw + c)] = d[static_cast<std::size_t>(r)];
  }
  for (Index r = 0; r < bh; ++r) {
    f.assign(grid.begin() + r * bw, grid.begin() + (r + 1) * bw);
    edt_1d(f, d, v, z);
    std::copy(d.begin(), d.end(), grid.begin() + r * bw);
  }
  std::vector<double> out;
  out.reserve(component.size());
  for (const Pixel& p : component) {
    out.push_back(grid[static_cast<std::size_t>((p.row - r0 + 1) * bw + (p.col - c0 + 1))]);
  }
  return out;
}

Pixel interior_point(const Component& component, Index height, Index width) {
  if (component.empty()) throw Error(ErrorCode::InvalidArgument, "interior_point of an empty component");
  const std::vector<double> dist = interior_distance_sq(component, height, width);
  std::size_t best = 0;
  for (std::size_t i = 1; i < component.size(); ++i) {
    if (dist[i] > dist[best] || (dist[i] == dist[best] && component[i] < component[best])) best = i;
  }
  return component[best];
}

Click next_click(const TensorF& pred, const TensorF& gt) {
  require_same_shape(pred.shape(), gt.shape(), "next_click");
  const Grid g = mask_grid(gt);
  std::vector<unsigned char> fn(static_cast<std::size_t>(gt.size())), fp(fn.size());
  for (Index i = 0; i < gt.size(); ++i) {
    const bool p = on(pred[i]), t = on(gt[i]);
    fn[static_cast<std::size_t>(i)] = t && !p;
    fp[static_cast<std::size_t>(i)] = p && !t;
  }
  const std::vector<Component> fn_parts = label(fn, g);
  const std::vector<Component> fp_parts = label(fp, g);
  const Component* best = nullptr;
  bool positive = true;
  auto consider = [&](const std::vector<Component>& parts, bool pol) {
    if (parts.empty()) return;
    const Component& c = parts.front();
    if (!best || c.size() > best->size() || (c.size() == best->size() && c.front() < best->front())) {
      best = &c;
      positive = pol;
    }
  };
  consider(fn_parts, true);
  consider(fp_parts, false);
  if (!best) throw Error(ErrorCode::NoErrorRegion, "prediction already equals ground truth");
  const Pixel p = interior_point(*best, g.height, g.width);
  return Click{p.col, p.row, positive ? Polarity::Positive : Polarity::Negative, 0};
}

}  // namespace pemed
