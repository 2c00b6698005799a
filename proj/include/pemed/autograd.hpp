#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a shared handle to a graph node holding an immutable value. Ops
// record their parents and a backward closure while gradient recording is
// enabled on the calling thread; backward() walks the graph in reverse
// topological order and accumulates gradients into every node that requires
// them. Leaves keep their gradients until zero_grad(), so several backward
// passes can be summed before an optimizer step.

#include <functional>
#include <memory>
#include <vector>

#include "pemed/tensor.hpp"

namespace pemed {

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  using NodeFn = std::function<void(Node<T>&)>;

  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  /// Builds an op output. Throws NON_FINITE if the value holds NaN or Inf.
  /// The backward closure receives the output node; parents are reachable
  /// through node.parents in the order given here.
  static Var make(Tensor<T> value, const std::vector<Var>& parents, NodeFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  /// nullptr when no gradient has reached this node.
  const Tensor<T>* grad() const { return node_->grad.empty() ? nullptr : &node_->grad; }
  Tensor<T> grad_or_zeros() const { return node_->grad.empty() ? Tensor<T>(shape()) : node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// In-place update of a leaf value (optimizer steps, checkpoint loading).
  Tensor<T>& leaf_value();

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using VarF = Var<float>;
using VarD = Var<double>;

/// Seeds d(loss)/d(loss) = 1 and propagates. Throws NON_SCALAR_LOSS unless
/// the loss holds exactly one element.
template <class T>
void backward(const Var<T>& loss);

enum class ScaleMode { Dk, SqrtDk };

struct AttentionConfig {
  Index d_model = 0;
  Index n_heads = 1;
  ScaleMode scale_mode = ScaleMode::Dk;

  Index d_k() const { return d_model / n_heads; }
  /// Divisor applied to QK^T: d_k itself, or sqrt(d_k).
  double scale_divisor() const;
  void validate() const;
};

enum class Pointwise { Sigmoid, Gelu, Relu };

// Elementwise arithmetic. Shapes must match exactly.
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T factor);
template <class T> Var<T> add_scalar(const Var<T>& a, T offset);
/// Sum of all elements, shape [1].
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);

template <class T> Var<T> reshape(const Var<T>& a, Shape shape);
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// Softmax over the last axis.
template <class T> Var<T> softmax_rows(const Var<T>& x);
/// Multi-head softmax(Q K^T / s) V with heads split over columns and concatenated back.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionConfig& cfg);
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));
template <class T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, Index stride, Index pad);
/// x[... x d_in] * w[d_in x d_out] + b[d_out]
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <class T> Var<T> pointwise(const Var<T>& x, Pointwise f);

// Layout ops for spatial feature maps. Channel-last grids are stored as
// [h*w x c] token matrices in row-major pixel order.
template <class T> Var<T> chw_to_tokens(const Var<T>& x);
template <class T> Var<T> tokens_to_chw(const Var<T>& x, Index h, Index w);
/// Concatenation along the last axis of rank-2 inputs with equal row counts.
template <class T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
/// Concatenation along the first axis.
template <class T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
/// Gathers non-overlapping stride x stride patches of an h x w token grid into
/// rows of length stride*stride*c ordered (dy, dx, channel).
template <class T> Var<T> patchify(const Var<T>& tokens, Index h, Index w, Index stride);
template <class T>
Var<T> upsample_bilinear(const Var<T>& tokens, Index h, Index w, Index out_h, Index out_w);

}  // namespace pemed
