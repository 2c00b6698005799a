#pragma once

// Dense kernels behind the autograd ops. The default namespace holds the
// OpenMP-parallel versions; pemed::kernels::reference holds plain serial
// implementations used as oracles in tests and as the benchmark baseline.
//
// The GEMMs map onto Eigen's blocked products. The remaining parallel kernels
// split only over independent output rows, so each element is accumulated in
// a fixed order and repeated runs are bit-identical.

#include <span>

#include "pemed/tensor.hpp"

namespace pemed::kernels {

/// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n,
             bool accumulate = false);

/// C[m x n] (+)= A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n,
             bool accumulate = false);

/// C[m x n] (+)= A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n,
             bool accumulate = false);

/// Row-wise softmax with max subtraction.
template <class T>
void softmax_rows(std::span<const T> in, std::span<T> out, Index rows, Index cols);

/// Normalizes each length-d row; writes per-row mean and reciprocal std for backward.
template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps,
                        std::span<T> out, std::span<T> mean, std::span<T> rstd, Index rows, Index d);

/// Accumulates into dx, dgain and dbias.
template <class T>
void layer_norm_backward(std::span<const T> dy, std::span<const T> x, std::span<const T> gain,
                         std::span<const T> mean, std::span<const T> rstd, std::span<T> dx, std::span<T> dgain,
                         std::span<T> dbias, Index rows, Index d);

struct ConvGeometry {
  Index c_in = 0, height = 0, width = 0;
  Index c_out = 0, kernel = 0, stride = 1, pad = 0;

  Index out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  Index out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  /// Throws BAD_GEOMETRY for even kernels or non-integral output extents.
  void validate() const;
};

/// Cross-correlation with zero padding. x: C_in x H x W, w: C_out x C_in x k x k.
template <class T>
void conv2d_forward(std::span<const T> x, std::span<const T> w, std::span<T> out, const ConvGeometry& g);

/// Accumulates into dx and dw.
template <class T>
void conv2d_backward(std::span<const T> dy, std::span<const T> x, std::span<const T> w, std::span<T> dx,
                     std::span<T> dw, const ConvGeometry& g);

/// Bilinear resize of a channel-last grid (h*w rows of c channels) with half-pixel centers.
template <class T>
void upsample_bilinear_forward(std::span<const T> x, std::span<T> out, Index h, Index w, Index c, Index out_h,
                               Index out_w);

/// Accumulates the adjoint of upsample_bilinear_forward into dx.
template <class T>
void upsample_bilinear_backward(std::span<const T> dy, std::span<T> dx, Index h, Index w, Index c, Index out_h,
                                Index out_w);

namespace reference {

template <class T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, Index m, Index k, Index n, bool trans_a,
          bool trans_b);

template <class T>
void softmax_rows(std::span<const T> in, std::span<T> out, Index rows, Index cols);

template <class T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, T eps,
                        std::span<T> out, Index rows, Index d);

template <class T>
void conv2d_forward(std::span<const T> x, std::span<const T> w, std::span<T> out, const ConvGeometry& g);

template <class T>
void upsample_bilinear_forward(std::span<const T> x, std::span<T> out, Index h, Index w, Index c, Index out_h,
                               Index out_w);

}  // namespace reference

}  // namespace pemed::kernels
