// Serial textbook kernels. Deliberately written in the most direct form so they
// can serve as oracles for the parallel versions in kernels.cpp.

#include <algorithm>
#include <cmath>

#include "bilinear.hpp"
#include "pemed/kernels.hpp"

namespace pemed::kernels::reference {

template <class T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n, bool trans_a,
          bool trans_b) {
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      T acc = 0;
      for (Index p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

template <class T>
void softmax_rows(std::span<const T> in, std::span<T> out, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const auto row = in.subspan(r * cols, cols);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum = 0;
    for (Index j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
    for (Index j = 0; j < cols; ++j) out[r * cols + j] = std::exp(row[j] - mx) / sum;
  }
}

template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps,
                        std::span<T> out, Index rows, Index d) {
  for (Index r = 0; r < rows; ++r) {
    T mu = 0;
    for (Index j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (Index j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<T>(d);
    for (Index j = 0; j < d; ++j) out[r * d + j] = (x[r * d + j] - mu) / std::sqrt(var + eps) * gain[j] + bias[j];
  }
}

template <class T>
void conv2d_forward(std::span<const T> x, std::span<const T> w, std::span<T> out, const ConvGeometry& g) {
  const Index oh = g.out_height();
  const Index ow = g.out_width();
  const Index kk = g.kernel;
  for (Index co = 0; co < g.c_out; ++co) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        T acc = 0;
        for (Index ci = 0; ci < g.c_in; ++ci) {
          for (Index ky = 0; ky < kk; ++ky) {
            for (Index kx = 0; kx < kk; ++kx) {
              const Index iy = oy * g.stride - g.pad + ky;
              const Index ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
              acc += w[((co * g.c_in + ci) * kk + ky) * kk + kx] * x[(ci * g.height + iy) * g.width + ix];
            }
          }
        }
        out[(co * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

template <class T>
void upsample_bilinear_forward(std::span<const T> x, std::span<T> out, Index h, Index w, Index c, Index out_h,
                               Index out_w) {
  for (Index oy = 0; oy < out_h; ++oy) {
    for (Index ox = 0; ox < out_w; ++ox) {
      const auto ty = detail::bilinear_tap(oy, h, out_h);
      const auto tx = detail::bilinear_tap(ox, w, out_w);
      for (Index ch = 0; ch < c; ++ch) {
        const double v00 = x[(ty.lo * w + tx.lo) * c + ch];
        const double v01 = x[(ty.lo * w + tx.hi) * c + ch];
        const double v10 = x[(ty.hi * w + tx.lo) * c + ch];
        const double v11 = x[(ty.hi * w + tx.hi) * c + ch];
        const double v = (1 - ty.frac) * ((1 - tx.frac) * v00 + tx.frac * v01) +
                         ty.frac * ((1 - tx.frac) * v10 + tx.frac * v11);
        out[(oy * out_w + ox) * c + ch] = static_cast<T>(v);
      }
    }
  }
}

#define PEMED_INSTANTIATE_REFERENCE(T)                                                                            \
  template void gemm<T>(std::span<const T>, std::span<const T>, std::span<T>, Index, Index, Index, bool, bool);   \
  template void softmax_rows<T>(std::span<const T>, std::span<T>, Index, Index);                                   \
  template void layer_norm_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, T, std::span<T>, \
                                      Index, Index);                                                               \
  template void conv2d_forward<T>(std::span<const T>, std::span<const T>, std::span<T>, const ConvGeometry&);      \
  template void upsample_bilinear_forward<T>(std::span<const T>, std::span<T>, Index, Index, Index, Index, Index);

PEMED_INSTANTIATE_REFERENCE(float)
PEMED_INSTANTIATE_REFERENCE(double)

#undef PEMED_INSTANTIATE_REFERENCE

}  // namespace pemed::kernels::reference
