#pragma once

// Parameter layout of the segmentation network and the parameterized
// building blocks shared by the backbone and the prompt attention module.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "pemed/config.hpp"
#include "pemed/params.hpp"

namespace pemed {

enum class InitKind { Uniform, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::Uniform;
  Index fan_in = 1;
};

/// Every learnable tensor implied by a config, independent of the module
/// flags: disabled components keep their parameters but are never read.
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);

/// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norm gains; fully
/// determined by the seed.
ParamStore<float> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws INVALID_ARGUMENT if names or shapes differ from parameter_specs(cfg).
template <class T>
void validate_params(const ModelConfig& cfg, const ParamStore<T>& params);

/// Stacks 1 x H x W planes into a constant [H*W x planes] token matrix.
template <class T>
Var<T> planes_to_tokens(std::initializer_list<const TensorF*> planes);

/// layer_norm with `<prefix>.g` / `<prefix>.b`.
template <class T>
Var<T> norm_layer(const ParamStore<T>& p, const std::string& prefix, const Var<T>& x);

/// linear with `<prefix>.w` / `<prefix>.b`.
template <class T>
Var<T> dense(const ParamStore<T>& p, const std::string& prefix, const Var<T>& x);

/// fc1 -> gelu -> fc2.
template <class T>
Var<T> mlp(const ParamStore<T>& p, const std::string& prefix, const Var<T>& x);

/// Non-overlapping stride x stride patches of an h x w token grid, projected
/// by `<prefix>.proj` and normalized by `<prefix>.norm`.
template <class T>
Var<T> patch_embed(const ParamStore<T>& p, const std::string& prefix, const Var<T>& tokens, Index h, Index w,
                   Index stride);

/// theta_c(Q, K, V) with learned projections: Q = query_src Wq, K = kv_src Wk,
/// V = kv_src Wv under `<prefix>.q|k|v`.
template <class T>
Var<T> attention_site(const ParamStore<T>& p, const std::string& prefix, const Var<T>& query_src, const Var<T>& kv_src,
                      const AttentionConfig& cfg);

}  // namespace pemed
