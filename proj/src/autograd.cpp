#include "pemed/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "pemed/kernels.hpp"

namespace pemed {

namespace {

thread_local bool g_grad_enabled = true;

template <class T>
Index rows_of(const Tensor<T>& t, Index last) {
  return t.size() / last;
}

template <class T>
void require_rank(const Var<T>& v, int rank, const char* what) {
  if (v.value().rank() != rank) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + to_string(v.shape()));
  }
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

// Copies columns [col0, col0 + width) of a row-major [rows x cols] matrix.
template <class T>
std::vector<T> slice_cols(std::span<const T> m, Index rows, Index cols, Index col0, Index width) {
  std::vector<T> out(static_cast<std::size_t>(rows * width));
  for (Index r = 0; r < rows; ++r) {
    std::copy_n(m.data() + r * cols + col0, width, out.data() + r * width);
  }
  return out;
}

template <class T>
void add_into_cols(std::span<T> m, std::span<const T> part, Index rows, Index cols, Index col0, Index width) {
  for (Index r = 0; r < rows; ++r) {
    T* dst = m.data() + r * cols + col0;
    const T* src = part.data() + r * width;
    for (Index j = 0; j < width; ++j) dst[j] += src[j];
  }
}

template <class T>
void softmax_backward_rows(std::span<const T> p, std::span<const T> dp, std::span<T> dx, Index rows, Index cols,
                           bool accumulate) {
  for (Index r = 0; r < rows; ++r) {
    const T* pr = p.data() + r * cols;
    const T* gr = dp.data() + r * cols;
    T dot = 0;
    for (Index j = 0; j < cols; ++j) dot += pr[j] * gr[j];
    T* out = dx.data() + r * cols;
    for (Index j = 0; j < cols; ++j) {
      const T v = pr[j] * (gr[j] - dot);
      out[j] = accumulate ? out[j] + v : v;
    }
  }
}

template <class T>
bool wants(const Node<T>& node, std::size_t i) {
  return node.parents[i]->requires_grad;
}

}  // namespace

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { g_grad_enabled = on; }

double AttentionConfig::scale_divisor() const {
  const double dk = static_cast<double>(d_k());
  return scale_mode == ScaleMode::Dk ? dk : std::sqrt(dk);
}

void AttentionConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw Error(ErrorCode::ShapeMismatch, "attention heads " + std::to_string(n_heads) + " must divide d_model " +
                                              std::to_string(d_model));
  }
}

template <class T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <class T>
Var<T> Var<T>::make(Tensor<T> value, const std::vector<Var>& parents, NodeFn backward) {
  if (!value.all_finite()) throw Error(ErrorCode::NonFinite, "op produced a non-finite value");
  Var out;
  out.node_ = std::make_shared<Node<T>>();
  out.node_->value = std::move(value);
  if (GradMode::enabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (any) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (const Var& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(backward);
    }
  }
  return out;
}

template <class T>
Tensor<T>& Var<T>::leaf_value() {
  if (!node_->parents.empty()) throw Error(ErrorCode::InvalidArgument, "leaf_value() on a non-leaf node");
  return node_->value;
}

template <class T>
void backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw Error(ErrorCode::NonScalarLoss, "loss has shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(n, p)) continue;
      auto g = n.parents[p]->grad_buffer().data();
      auto d = n.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(n, p)) continue;
      const T sign = p == 0 ? T(1) : T(-1);
      auto g = n.parents[p]->grad_buffer().data();
      auto d = n.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * d[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    auto d = n.grad.data();
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(n, p)) continue;
      auto other = n.parents[1 - p]->value.data();
      auto g = n.parents[p]->grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i] * other[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= factor;
  return Var<T>::make(std::move(out), {a}, [factor](Node<T>& n) {
    auto g = n.parents[0]->grad_buffer().data();
    auto d = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * d[i];
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T offset) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v += offset;
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    auto g = n.parents[0]->grad_buffer().data();
    auto d = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().data()) total += v;
  return Var<T>::make(Tensor<T>({1}, {total}), {a}, [](Node<T>& n) {
    const T d = n.grad[0];
    for (T& g : n.parents[0]->grad_buffer().data()) g += d;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return Var<T>::make(a.value().reshaped(std::move(shape)), {a}, [](Node<T>& n) {
    auto g = n.parents[0]->grad_buffer().data();
    auto d = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw Error(ErrorCode::ShapeMismatch, "matmul inner extents " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor<T> out({m, n});
  kernels::gemm_nn<T>(a.value().data(), b.value().data(), out.data(), m, k, n);
  return Var<T>::make(std::move(out), {a, b}, [m, k, n](Node<T>& node) {
    const auto& av = node.parents[0]->value;
    const auto& bv = node.parents[1]->value;
    if (wants(node, 0)) {
      kernels::gemm_nt<T>(node.grad.data(), bv.data(), node.parents[0]->grad_buffer().data(), m, n, k, true);
    }
    if (wants(node, 1)) {
      kernels::gemm_tn<T>(av.data(), node.grad.data(), node.parents[1]->grad_buffer().data(), k, m, n, true);
    }
  });
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  const Index cols = x.shape().back();
  const Index rows = rows_of(x.value(), cols);
  Tensor<T> out(x.shape());
  kernels::softmax_rows<T>(x.value().data(), out.data(), rows, cols);
  return Var<T>::make(std::move(out), {x}, [rows, cols](Node<T>& n) {
    softmax_backward_rows<T>(n.value.data(), n.grad.data(), n.parents[0]->grad_buffer().data(), rows, cols, true);
  });
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionConfig& cfg) {
  cfg.validate();
  require_rank(q, 2, "attention Q");
  require_rank(k, 2, "attention K");
  require_rank(v, 2, "attention V");
  const Index d = cfg.d_model;
  const Index nq = q.shape()[0];
  const Index nk = k.shape()[0];
  if (q.shape()[1] != d || k.shape()[1] != d || v.shape()[1] != d || v.shape()[0] != nk) {
    throw Error(ErrorCode::ShapeMismatch, "attention Q" + to_string(q.shape()) + " K" + to_string(k.shape()) + " V" +
                                              to_string(v.shape()) + " d_model=" + std::to_string(d));
  }
  const Index heads = cfg.n_heads;
  const Index dk = cfg.d_k();
  const T inv_scale = static_cast<T>(1.0 / cfg.scale_divisor());

  // Per-head probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<std::vector<T>>>(static_cast<std::size_t>(heads));
  Tensor<T> out({nq, d});
  std::vector<T> scores(static_cast<std::size_t>(nq * nk));
  std::vector<T> oh(static_cast<std::size_t>(nq * dk));
  for (Index h = 0; h < heads; ++h) {
    const auto qh = slice_cols<T>(q.value().data(), nq, d, h * dk, dk);
    const auto kh = slice_cols<T>(k.value().data(), nk, d, h * dk, dk);
    const auto vh = slice_cols<T>(v.value().data(), nk, d, h * dk, dk);
    kernels::gemm_nt<T>(qh, kh, scores, nq, dk, nk);
    for (T& s : scores) s *= inv_scale;
    auto& p = (*probs)[static_cast<std::size_t>(h)];
    p.resize(scores.size());
    kernels::softmax_rows<T>(scores, p, nq, nk);
    kernels::gemm_nn<T>(p, vh, oh, nq, nk, dk);
    add_into_cols<T>(out.data(), oh, nq, d, h * dk, dk);
  }

  return Var<T>::make(std::move(out), {q, k, v}, [=](Node<T>& n) {
    const auto& qv = n.parents[0]->value;
    const auto& kv = n.parents[1]->value;
    const auto& vv = n.parents[2]->value;
    std::vector<T> dp(static_cast<std::size_t>(nq * nk));
    std::vector<T> ds(dp.size());
    std::vector<T> dqh(static_cast<std::size_t>(nq * dk));
    std::vector<T> dkh(static_cast<std::size_t>(nk * dk));
    std::vector<T> dvh(static_cast<std::size_t>(nk * dk));
    for (Index h = 0; h < heads; ++h) {
      const auto& p = (*probs)[static_cast<std::size_t>(h)];
      const auto dout = slice_cols<T>(n.grad.data(), nq, d, h * dk, dk);
      const auto qh = slice_cols<T>(qv.data(), nq, d, h * dk, dk);
      const auto kh = slice_cols<T>(kv.data(), nk, d, h * dk, dk);
      const auto vh = slice_cols<T>(vv.data(), nk, d, h * dk, dk);
      if (wants(n, 2)) {
        kernels::gemm_tn<T>(p, dout, dvh, nk, nq, dk);
        add_into_cols<T>(n.parents[2]->grad_buffer().data(), dvh, nk, d, h * dk, dk);
      }
      if (!wants(n, 0) && !wants(n, 1)) continue;
      kernels::gemm_nt<T>(dout, vh, dp, nq, dk, nk);
      softmax_backward_rows<T>(p, dp, ds, nq, nk, false);
      for (T& s : ds) s *= inv_scale;
      if (wants(n, 0)) {
        kernels::gemm_nn<T>(ds, kh, dqh, nq, nk, dk);
        add_into_cols<T>(n.parents[0]->grad_buffer().data(), dqh, nq, d, h * dk, dk);
      }
      if (wants(n, 1)) {
        kernels::gemm_tn<T>(ds, qh, dkh, nk, nq, dk);
        add_into_cols<T>(n.parents[1]->grad_buffer().data(), dkh, nk, d, h * dk, dk);
      }
    }
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const Index d = x.shape().back();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw Error(ErrorCode::ShapeMismatch, "layer_norm gain/bias must have " + std::to_string(d) + " elements");
  }
  if (!(eps > 0)) throw Error(ErrorCode::InvalidArgument, "layer_norm eps must be positive");
  const Index rows = rows_of(x.value(), d);
  Tensor<T> out(x.shape());
  auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(2 * rows));
  std::span<T> mean_span(stats->data(), static_cast<std::size_t>(rows));
  std::span<T> rstd_span(stats->data() + rows, static_cast<std::size_t>(rows));
  kernels::layer_norm_forward<T>(x.value().data(), gain.value().data(), bias.value().data(), eps, out.data(), mean_span,
                                 rstd_span, rows, d);
  return Var<T>::make(std::move(out), {x, gain, bias}, [stats, rows, d](Node<T>& n) {
    std::span<const T> mu(stats->data(), static_cast<std::size_t>(rows));
    std::span<const T> rs(stats->data() + rows, static_cast<std::size_t>(rows));
    // The kernel writes all three gradients; route unused ones to scratch.
    Tensor<T> scratch_x, scratch_g, scratch_b;
    auto target = [&](std::size_t i, Tensor<T>& scratch) -> std::span<T> {
      if (wants(n, i)) return n.parents[i]->grad_buffer().data();
      scratch = Tensor<T>(n.parents[i]->value.shape());
      return scratch.data();
    };
    kernels::layer_norm_backward<T>(n.grad.data(), n.parents[0]->value.data(), n.parents[1]->value.data(), mu, rs,
                                    target(0, scratch_x), target(1, scratch_g), target(2, scratch_b), rows, d);
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, Index stride, Index pad) {
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  kernels::ConvGeometry g;
  g.c_in = x.shape()[0];
  g.height = x.shape()[1];
  g.width = x.shape()[2];
  g.c_out = w.shape()[0];
  g.kernel = w.shape()[2];
  g.stride = stride;
  g.pad = pad;
  if (w.shape()[1] != g.c_in || w.shape()[3] != g.kernel) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d weight " + to_string(w.shape()) + " for input " + to_string(x.shape()));
  }
  g.validate();
  Tensor<T> out({g.c_out, g.out_height(), g.out_width()});
  kernels::conv2d_forward<T>(x.value().data(), w.value().data(), out.data(), g);
  return Var<T>::make(std::move(out), {x, w}, [g](Node<T>& n) {
    Tensor<T> scratch_x, scratch_w;
    std::span<T> dx, dw;
    if (wants(n, 0)) {
      dx = n.parents[0]->grad_buffer().data();
    } else {
      scratch_x = Tensor<T>(n.parents[0]->value.shape());
      dx = scratch_x.data();
    }
    if (wants(n, 1)) {
      dw = n.parents[1]->grad_buffer().data();
    } else {
      scratch_w = Tensor<T>(n.parents[1]->value.shape());
      dw = scratch_w.data();
    }
    kernels::conv2d_backward<T>(n.grad.data(), n.parents[0]->value.data(), n.parents[1]->value.data(), dx, dw, g);
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_rank(w, 2, "linear weight");
  const Index din = w.shape()[0];
  const Index dout = w.shape()[1];
  if (x.shape().back() != din || b.value().size() != dout) {
    throw Error(ErrorCode::ShapeMismatch, "linear x" + to_string(x.shape()) + " W" + to_string(w.shape()) + " b" +
                                              to_string(b.shape()));
  }
  const Index rows = rows_of(x.value(), din);
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<T> out(out_shape);
  kernels::gemm_nn<T>(x.value().data(), w.value().data(), out.data(), rows, din, dout);
  auto o = out.data();
  auto bv = b.value().data();
  for (Index r = 0; r < rows; ++r) {
    for (Index j = 0; j < dout; ++j) o[r * dout + j] += bv[j];
  }
  return Var<T>::make(std::move(out), {x, w, b}, [rows, din, dout](Node<T>& n) {
    if (wants(n, 0)) {
      kernels::gemm_nt<T>(n.grad.data(), n.parents[1]->value.data(), n.parents[0]->grad_buffer().data(), rows, dout,
                          din, true);
    }
    if (wants(n, 1)) {
      kernels::gemm_tn<T>(n.parents[0]->value.data(), n.grad.data(), n.parents[1]->grad_buffer().data(), din, rows,
                          dout, true);
    }
    if (wants(n, 2)) {
      auto db = n.parents[2]->grad_buffer().data();
      auto d = n.grad.data();
      for (Index r = 0; r < rows; ++r) {
        for (Index j = 0; j < dout; ++j) db[j] += d[r * dout + j];
      }
    }
  });
}

template <class T>
Var<T> pointwise(const Var<T>& x, Pointwise f) {
  Tensor<T> out(x.shape());
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    switch (f) {
      case Pointwise::Sigmoid: o[i] = sigmoid_scalar(in[i]); break;
      case Pointwise::Gelu: o[i] = gelu_scalar(in[i]); break;
      case Pointwise::Relu: o[i] = in[i] > 0 ? in[i] : T(0); break;
    }
  }
  return Var<T>::make(std::move(out), {x}, [f](Node<T>& n) {
    auto g = n.parents[0]->grad_buffer().data();
    auto in = n.parents[0]->value.data();
    auto y = n.value.data();
    auto d = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (f) {
        case Pointwise::Sigmoid: g[i] += d[i] * y[i] * (T(1) - y[i]); break;
        case Pointwise::Gelu: g[i] += d[i] * gelu_grad(in[i]); break;
        case Pointwise::Relu: g[i] += in[i] > 0 ? d[i] : T(0); break;
      }
    }
  });
}

template <class T>
Var<T> chw_to_tokens(const Var<T>& x) {
  require_rank(x, 3, "chw_to_tokens");
  const Index c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor<T> out({hw, c});
  auto in = x.value().data();
  auto o = out.data();
  for (Index ch = 0; ch < c; ++ch) {
    for (Index p = 0; p < hw; ++p) o[p * c + ch] = in[ch * hw + p];
  }
  return Var<T>::make(std::move(out), {x}, [c, hw](Node<T>& n) {
    auto g = n.parents[0]->grad_buffer().data();
    auto d = n.grad.data();
    for (Index ch = 0; ch < c; ++ch) {
      for (Index p = 0; p < hw; ++p) g[ch * hw + p] += d[p * c + ch];
    }
  });
}

template <class T>
Var<T> tokens_to_chw(const Var<T>& x, Index h, Index w) {
  require_rank(x, 2, "tokens_to_chw");
  if (x.shape()[0] != h * w) throw Error(ErrorCode::ShapeMismatch, "tokens_to_chw token count != h*w");
  const Index c = x.shape()[1], hw = h * w;
  Tensor<T> out({c, h, w});
  auto in = x.value().data();
  auto o = out.data();
  for (Index ch = 0; ch < c; ++ch) {
    for (Index p = 0; p < hw; ++p) o[ch * hw + p] = in[p * c + ch];
  }
  return Var<T>::make(std::move(out), {x}, [c, hw](Node<T>& n) {
    auto g = n.parents[0]->grad_buffer().data();
    auto d = n.grad.data();
    for (Index ch = 0; ch < c; ++ch) {
      for (Index p = 0; p < hw; ++p) g[p * c + ch] += d[ch * hw + p];
    }
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  const Index rows = parts[0].shape()[0];
  Index total = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != rows) throw Error(ErrorCode::ShapeMismatch, "concat_cols row counts differ");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor<T> out({rows, total});
  Index col = 0;
  for (const auto& p : parts) {
    const Index wdt = p.shape()[1];
    add_into_cols<T>(out.data(), p.value().data(), rows, total, col, wdt);
    col += wdt;
  }
  return Var<T>::make(std::move(out), parts, [rows, total, widths](Node<T>& n) {
    Index c0 = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (wants(n, i)) {
        auto g = n.parents[i]->grad_buffer().data();
        const auto part = slice_cols<T>(n.grad.data(), rows, total, c0, widths[i]);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += part[j];
      }
      c0 += widths[i];
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  Index rows = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != trailing) throw Error(ErrorCode::ShapeMismatch, "concat_rows trailing shapes differ");
    rows += p.shape()[0];
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), trailing.begin(), trailing.end());
  return Var<T>::make(Tensor<T>(shape, std::move(data)), parts, [](Node<T>& n) {
    std::size_t offset = 0;
    auto d = n.grad.data();
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const auto len = static_cast<std::size_t>(n.parents[i]->value.size());
      if (wants(n, i)) {
        auto g = n.parents[i]->grad_buffer().data();
        for (std::size_t j = 0; j < len; ++j) g[j] += d[offset + j];
      }
      offset += len;
    }
  });
}

template <class T>
Var<T> patchify(const Var<T>& tokens, Index h, Index w, Index stride) {
  require_rank(tokens, 2, "patchify");
  if (tokens.shape()[0] != h * w) throw Error(ErrorCode::ShapeMismatch, "patchify token count != h*w");
  if (stride <= 0 || h % stride != 0 || w % stride != 0) {
    throw Error(ErrorCode::BadGeometry, "grid " + std::to_string(h) + "x" + std::to_string(w) +
                                            " not divisible by stride " + std::to_string(stride));
  }
  const Index c = tokens.shape()[1];
  const Index ph = h / stride, pw = w / stride;
  const Index width = stride * stride * c;
  // index[i] = source offset of output element i; the op is a permutation.
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(ph * pw * width));
  for (Index py = 0; py < ph; ++py) {
    for (Index px = 0; px < pw; ++px) {
      for (Index dy = 0; dy < stride; ++dy) {
        for (Index dx = 0; dx < stride; ++dx) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index dst = (py * pw + px) * width + (dy * stride + dx) * c + ch;
            const Index src = ((py * stride + dy) * w + px * stride + dx) * c + ch;
            (*index)[static_cast<std::size_t>(dst)] = src;
          }
        }
      }
    }
  }
  Tensor<T> out({ph * pw, width});
  auto in = tokens.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[static_cast<std::size_t>((*index)[i])];
  return Var<T>::make(std::move(out), {tokens}, [index](Node<T>& n) {
    auto g = n.parents[0]->grad_buffer().data();
    auto d = n.grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) g[static_cast<std::size_t>((*index)[i])] += d[i];
  });
}

template <class T>
Var<T> upsample_bilinear(const Var<T>& tokens, Index h, Index w, Index out_h, Index out_w) {
  require_rank(tokens, 2, "upsample_bilinear");
  if (tokens.shape()[0] != h * w) throw Error(ErrorCode::ShapeMismatch, "upsample token count != h*w");
  const Index c = tokens.shape()[1];
  if (h == out_h && w == out_w) return tokens;
  Tensor<T> out({out_h * out_w, c});
  kernels::upsample_bilinear_forward<T>(tokens.value().data(), out.data(), h, w, c, out_h, out_w);
  return Var<T>::make(std::move(out), {tokens}, [h, w, c, out_h, out_w](Node<T>& n) {
    kernels::upsample_bilinear_backward<T>(n.grad.data(), n.parents[0]->grad_buffer().data(), h, w, c, out_h, out_w);
  });
}

#define PEMED_INSTANTIATE_AUTOGRAD(T)                                                                   \
  template class Var<T>;                                                                                \
  template void backward<T>(const Var<T>&);                                                             \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> scale<T>(const Var<T>&, T);                                                           \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                                      \
  template Var<T> sum<T>(const Var<T>&);                                                                \
  template Var<T> mean<T>(const Var<T>&);                                                               \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                     \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> softmax_rows<T>(const Var<T>&);                                                       \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, const AttentionConfig&);    \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                        \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, Index, Index);                                \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                               \
  template Var<T> pointwise<T>(const Var<T>&, Pointwise);                                               \
  template Var<T> chw_to_tokens<T>(const Var<T>&);                                                      \
  template Var<T> tokens_to_chw<T>(const Var<T>&, Index, Index);                                        \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                           \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                           \
  template Var<T> patchify<T>(const Var<T>&, Index, Index, Index);                                      \
  template Var<T> upsample_bilinear<T>(const Var<T>&, Index, Index, Index, Index);

PEMED_INSTANTIATE_AUTOGRAD(float)
PEMED_INSTANTIATE_AUTOGRAD(double)

#undef PEMED_INSTANTIATE_AUTOGRAD

}  // namespace pemed
