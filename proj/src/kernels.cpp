#include "pemed/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "bilinear.hpp"

namespace pemed::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr Index kParallelWork = 1 << 15;

}  // namespace

void ConvGeometry::validate() const {
  if (kernel <= 0 || kernel % 2 == 0) {
    throw Error(ErrorCode::BadGeometry, "conv2d kernel must be odd, got " + std::to_string(kernel));
  }
  if (stride <= 0 || pad < 0) throw Error(ErrorCode::BadGeometry, "conv2d stride must be positive and pad >= 0");
  const Index span_h = height + 2 * pad - kernel;
  const Index span_w = width + 2 * pad - kernel;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw Error(ErrorCode::BadGeometry, "conv2d output extent is not integral for " + std::to_string(height) + "x" +
                                            std::to_string(width) + " k=" + std::to_string(kernel) +
                                            " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad));
  }
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

template <class T, class Product>
void store(T* c, Index m, Index n, const Product& product, bool accumulate) {
  MutMap<T> out(c, m, n);
  if (accumulate) {
    out.noalias() += product;
  } else {
    out.noalias() = product;
  }
}

}  // namespace

template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n, bool accumulate) {
  store(c.data(), m, n, ConstMap<T>(a.data(), m, k) * ConstMap<T>(b.data(), k, n), accumulate);
}

template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n, bool accumulate) {
  store(c.data(), m, n, ConstMap<T>(a.data(), m, k) * ConstMap<T>(b.data(), n, k).transpose(), accumulate);
}

template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n, bool accumulate) {
  store(c.data(), m, n, ConstMap<T>(a.data(), k, m).transpose() * ConstMap<T>(b.data(), k, n), accumulate);
}

template <class T>
void softmax_rows(std::span<const T> in, std::span<T> out, Index rows, Index cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const T* x = in.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = x[0];
    for (Index j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T sum = 0;
    for (Index j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const T inv = T(1) / sum;
    for (Index j = 0; j < cols; ++j) y[j] *= inv;
  }
}

template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps,
                        std::span<T> out, std::span<T> mean, std::span<T> rstd, Index rows, Index d) {
#pragma omp parallel for schedule(static) if (rows * d > kParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T* yr = out.data() + r * d;
    T mu = 0;
    for (Index j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (Index j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    for (Index j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

template <class T>
void layer_norm_backward(std::span<const T> dy, std::span<const T> x, std::span<const T> gain,
                         std::span<const T> mean, std::span<const T> rstd, std::span<T> dx, std::span<T> dgain,
                         std::span<T> dbias, Index rows, Index d) {
#pragma omp parallel for schedule(static) if (rows * d > kParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const T* dyr = dy.data() + r * d;
    const T* xr = x.data() + r * d;
    T* dxr = dx.data() + r * d;
    const T mu = mean[r];
    const T rs = rstd[r];
    T mean_g = 0;
    T mean_gx = 0;
    for (Index j = 0; j < d; ++j) {
      const T g = dyr[j] * gain[j];
      mean_g += g;
      mean_gx += g * (xr[j] - mu) * rs;
    }
    mean_g /= static_cast<T>(d);
    mean_gx /= static_cast<T>(d);
    for (Index j = 0; j < d; ++j) {
      const T xhat = (xr[j] - mu) * rs;
      dxr[j] += rs * (dyr[j] * gain[j] - mean_g - xhat * mean_gx);
    }
  }
  for (Index r = 0; r < rows; ++r) {
    const T* dyr = dy.data() + r * d;
    const T* xr = x.data() + r * d;
    for (Index j = 0; j < d; ++j) {
      dgain[j] += dyr[j] * (xr[j] - mean[r]) * rstd[r];
      dbias[j] += dyr[j];
    }
  }
}

template <class T>
void conv2d_forward(std::span<const T> x, std::span<const T> w, std::span<T> out, const ConvGeometry& g) {
  const Index oh = g.out_height();
  const Index ow = g.out_width();
  const Index kk = g.kernel;
  if (kk == 1 && g.stride == 1 && g.pad == 0) {
    gemm_nn<T>(w, x, out, g.c_out, g.c_in, oh * ow, false);
    return;
  }
#pragma omp parallel for schedule(static) if (g.c_out * oh * ow * g.c_in * kk * kk > kParallelWork)
  for (Index co = 0; co < g.c_out; ++co) {
    T* plane = out.data() + co * oh * ow;
    std::fill(plane, plane + oh * ow, T(0));
    for (Index ci = 0; ci < g.c_in; ++ci) {
      const T* xin = x.data() + ci * g.height * g.width;
      const T* wk = w.data() + (co * g.c_in + ci) * kk * kk;
      for (Index ky = 0; ky < kk; ++ky) {
        for (Index kx = 0; kx < kk; ++kx) {
          const T wv = wk[ky * kk + kx];
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.width) continue;
              plane[oy * ow + ox] += wv * xin[iy * g.width + ix];
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward(std::span<const T> dy, std::span<const T> x, std::span<const T> w, std::span<T> dx,
                     std::span<T> dw, const ConvGeometry& g) {
  const Index oh = g.out_height();
  const Index ow = g.out_width();
  const Index kk = g.kernel;
  const Index work = g.c_out * oh * ow * g.c_in * kk * kk;
  if (kk == 1 && g.stride == 1 && g.pad == 0) {
    gemm_nt<T>(dy, x, dw, g.c_out, oh * ow, g.c_in, true);
    gemm_tn<T>(w, dy, dx, g.c_in, g.c_out, oh * ow, true);
    return;
  }
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (Index co = 0; co < g.c_out; ++co) {
    const T* dplane = dy.data() + co * oh * ow;
    for (Index ci = 0; ci < g.c_in; ++ci) {
      const T* xin = x.data() + ci * g.height * g.width;
      T* dwk = dw.data() + (co * g.c_in + ci) * kk * kk;
      for (Index ky = 0; ky < kk; ++ky) {
        for (Index kx = 0; kx < kk; ++kx) {
          T acc = 0;
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.width) continue;
              acc += dplane[oy * ow + ox] * xin[iy * g.width + ix];
            }
          }
          dwk[ky * kk + kx] += acc;
        }
      }
    }
  }
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (Index ci = 0; ci < g.c_in; ++ci) {
    T* dxin = dx.data() + ci * g.height * g.width;
    for (Index co = 0; co < g.c_out; ++co) {
      const T* dplane = dy.data() + co * oh * ow;
      const T* wk = w.data() + (co * g.c_in + ci) * kk * kk;
      for (Index ky = 0; ky < kk; ++ky) {
        for (Index kx = 0; kx < kk; ++kx) {
          const T wv = wk[ky * kk + kx];
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.width) continue;
              dxin[iy * g.width + ix] += wv * dplane[oy * ow + ox];
            }
          }
        }
      }
    }
  }
}

template <class T>
void upsample_bilinear_forward(std::span<const T> x, std::span<T> out, Index h, Index w, Index c, Index out_h,
                               Index out_w) {
#pragma omp parallel for schedule(static) if (out_h * out_w * c > kParallelWork)
  for (Index oy = 0; oy < out_h; ++oy) {
    const auto ty = detail::bilinear_tap(oy, h, out_h);
    const T fy = static_cast<T>(ty.frac);
    for (Index ox = 0; ox < out_w; ++ox) {
      const auto tx = detail::bilinear_tap(ox, w, out_w);
      const T fx = static_cast<T>(tx.frac);
      const T* p00 = x.data() + (ty.lo * w + tx.lo) * c;
      const T* p01 = x.data() + (ty.lo * w + tx.hi) * c;
      const T* p10 = x.data() + (ty.hi * w + tx.lo) * c;
      const T* p11 = x.data() + (ty.hi * w + tx.hi) * c;
      T* o = out.data() + (oy * out_w + ox) * c;
      for (Index ch = 0; ch < c; ++ch) {
        const T top = p00[ch] + fx * (p01[ch] - p00[ch]);
        const T bottom = p10[ch] + fx * (p11[ch] - p10[ch]);
        o[ch] = top + fy * (bottom - top);
      }
    }
  }
}

template <class T>
void upsample_bilinear_backward(std::span<const T> dy, std::span<T> dx, Index h, Index w, Index c, Index out_h,
                                Index out_w) {
  // Scatter; kept serial so the accumulation order is fixed.
  for (Index oy = 0; oy < out_h; ++oy) {
    const auto ty = detail::bilinear_tap(oy, h, out_h);
    const T fy = static_cast<T>(ty.frac);
    for (Index ox = 0; ox < out_w; ++ox) {
      const auto tx = detail::bilinear_tap(ox, w, out_w);
      const T fx = static_cast<T>(tx.frac);
      const T w00 = (T(1) - fy) * (T(1) - fx);
      const T w01 = (T(1) - fy) * fx;
      const T w10 = fy * (T(1) - fx);
      const T w11 = fy * fx;
      T* d00 = dx.data() + (ty.lo * w + tx.lo) * c;
      T* d01 = dx.data() + (ty.lo * w + tx.hi) * c;
      T* d10 = dx.data() + (ty.hi * w + tx.lo) * c;
      T* d11 = dx.data() + (ty.hi * w + tx.hi) * c;
      const T* g = dy.data() + (oy * out_w + ox) * c;
      for (Index ch = 0; ch < c; ++ch) {
        d00[ch] += w00 * g[ch];
        d01[ch] += w01 * g[ch];
        d10[ch] += w10 * g[ch];
        d11[ch] += w11 * g[ch];
      }
    }
  }
}

#define PEMED_INSTANTIATE_KERNELS(T)                                                                              \
  template void gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>, Index, Index, Index, bool);       \
  template void gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, Index, Index, Index, bool);       \
  template void gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>, Index, Index, Index, bool);       \
  template void softmax_rows<T>(std::span<const T>, std::span<T>, Index, Index);                                   \
  template void layer_norm_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, T, std::span<T>, \
                                      std::span<T>, std::span<T>, Index, Index);                                   \
  template void layer_norm_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,                 \
                                       std::span<const T>, std::span<const T>, std::span<T>, std::span<T>,         \
                                       std::span<T>, Index, Index);                                                \
  template void conv2d_forward<T>(std::span<const T>, std::span<const T>, std::span<T>, const ConvGeometry&);      \
  template void conv2d_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>,       \
                                   std::span<T>, const ConvGeometry&);                                             \
  template void upsample_bilinear_forward<T>(std::span<const T>, std::span<T>, Index, Index, Index, Index, Index); \
  template void upsample_bilinear_backward<T>(std::span<const T>, std::span<T>, Index, Index, Index, Index, Index);

PEMED_INSTANTIATE_KERNELS(float)
PEMED_INSTANTIATE_KERNELS(double)

#undef PEMED_INSTANTIATE_KERNELS

}  // namespace pemed::kernels
