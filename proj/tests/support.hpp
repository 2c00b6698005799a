#pragma once

// Shared fixtures and float64 brute-force oracles for the test suites. The
// oracles use plain nested vectors and share no code with the library.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pemed/layers.hpp"

namespace pemed::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const TensorD& t) {
  Mat m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (Index r = 0; r < t.dim(0); ++r)
    for (Index c = 0; c < t.dim(1); ++c) m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = t.at(r, c);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < c[i].size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
  return c;
}

/// x W + b with W [d_in x d_out].
inline Mat dense(const Mat& x, const Mat& w, const std::vector<double>& b) {
  Mat y = matmul(x, w);
  for (auto& row : y)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return y;
}

/// softmax(Q_h K_h^T / s) V_h per head over contiguous column blocks.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, int heads, bool sqrt_scale) {
  const std::size_t d = q[0].size();
  const std::size_t dk = d / static_cast<std::size_t>(heads);
  const double s = sqrt_scale ? std::sqrt(static_cast<double>(dk)) : static_cast<double>(dk);
  Mat out(q.size(), std::vector<double>(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dk;
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> logits(k.size());
      for (std::size_t j = 0; j < k.size(); ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < dk; ++c) dot += q[i][off + c] * k[j][off + c];
        logits[j] = dot / s;
      }
      double mx = logits[0];
      for (double l : logits) mx = std::max(mx, l);
      double z = 0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = 0; c < dk; ++c) out[i][off + c] += logits[j] / z * v[j][off + c];
    }
  }
  return out;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b, double eps = 1e-5) {
  Mat y = x;
  for (auto& row : y) {
    double mean = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return y;
}

inline std::vector<double> to_vec(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

template <class T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

inline TensorD identity(Index d) {
  TensorD t({d, d});
  for (Index i = 0; i < d; ++i) t.at(i, i) = 1.0;
  return t;
}

/// Smallest model the four-stage schedule admits (32 px, widths 4/4/8/8).
inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.stage_dims = {4, 4, 8, 8};
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.stage_heads = {1, 2, 2, 4};
  cfg.fusion_dim = 4;
  cfg.decoder_hidden = 4;
  cfg.tsip_hidden = 4;
  cfg.mlp_ratio = 2;
  cfg.disk_radius = 3.0;
  return cfg;
}

/// Model config the engine-level tests use: default widths on 32 px inputs.
inline ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.stage_dims = {8, 8, 16, 16};
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.stage_heads = {1, 2, 2, 4};
  cfg.fusion_dim = 8;
  cfg.decoder_hidden = 8;
  cfg.tsip_hidden = 4;
  cfg.disk_radius = 3.0;
  return cfg;
}

/// Initialized parameters with biases, gains and the zero-init entries
/// perturbed so no gradient path is trivially dead.
template <class T>
ParamStore<T> jittered_params(const ModelConfig& cfg, std::uint64_t seed, double jitter = 0.2) {
  ParamStore<float> base = init_params(cfg, seed);
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  std::uniform_real_distribution<double> dist(-jitter, jitter);
  for (auto& [name, var] : base) {
    for (float& v : var.leaf_value().data()) v += static_cast<float>(dist(rng));
  }
  return base.template cast<T>();
}

/// theta_c at one attention site: projections then brute-force attention.
template <class T>
Mat theta(const ParamStore<T>& p, const std::string& site, const Mat& q_src, const Mat& kv_src, int heads,
          bool sqrt_scale = false) {
  auto proj = [&](const char* which, const Mat& x) {
    const std::string n = site + "." + which;
    return dense(x, to_mat(p[n + ".w"].value().template cast<double>()),
                 to_vec(p[n + ".b"].value().template cast<double>()));
  };
  return attention(proj("q", q_src), proj("k", kv_src), proj("v", kv_src), heads, sqrt_scale);
}

template <class T>
Mat norm(const ParamStore<T>& p, const std::string& prefix, const Mat& x) {
  return layer_norm(x, to_vec(p[prefix + ".g"].value().template cast<double>()),
                    to_vec(p[prefix + ".b"].value().template cast<double>()));
}

template <class T>
void set_identity_projections(ParamStore<T>& p, const std::string& site, Index d) {
  for (const char* proj : {".q", ".k", ".v"}) {
    p.at(site + proj + ".w").leaf_value() = identity(d).template cast<T>();
    p.at(site + proj + ".b").leaf_value() = Tensor<T>({d});
  }
}

}  // namespace pemed::testing
