#include "pemed/layers.hpp"

#include <cmath>
#include <random>

namespace pemed {

namespace {

void add_dense(std::vector<ParamSpec>& out, const std::string& prefix, Index in, Index outd) {
  out.push_back({prefix + ".w", {in, outd}, InitKind::Uniform, in});
  out.push_back({prefix + ".b", {outd}, InitKind::Zeros, in});
}

void add_norm(std::vector<ParamSpec>& out, const std::string& prefix, Index d) {
  out.push_back({prefix + ".g", {d}, InitKind::Ones, 1});
  out.push_back({prefix + ".b", {d}, InitKind::Zeros, 1});
}

void add_patch_embed(std::vector<ParamSpec>& out, const std::string& prefix, Index c_in, Index stride, Index d) {
  add_dense(out, prefix + ".proj", stride * stride * c_in, d);
  add_norm(out, prefix + ".norm", d);
}

void add_attention_site(std::vector<ParamSpec>& out, const std::string& prefix, Index d) {
  add_dense(out, prefix + ".q", d, d);
  add_dense(out, prefix + ".k", d, d);
  add_dense(out, prefix + ".v", d, d);
}

}  // namespace

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  Index c_in = 4;
  for (int s = 0; s < 4; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const Index d = cfg.stage_dims[su];
    const std::string stage = "stage" + std::to_string(s);
    add_patch_embed(out, stage + ".embed", c_in, cfg.patch_strides[su], d);
    for (Index b = 0; b < cfg.stage_depths[su]; ++b) {
      const std::string block = stage + ".block" + std::to_string(b);
      add_norm(out, block + ".norm1", d);
      add_attention_site(out, block + ".attn", d);
      add_dense(out, block + ".attn.out", d, d);
      add_norm(out, block + ".norm2", d);
      add_dense(out, block + ".mlp.fc1", d, cfg.mlp_ratio * d);
      add_dense(out, block + ".mlp.fc2", cfg.mlp_ratio * d, d);
    }
    c_in = d;
  }

  const Index d0 = cfg.stage_dims[0];
  const Index s0 = cfg.patch_strides[0];
  add_patch_embed(out, "palm.embed_pos", 2, s0, d0);
  add_patch_embed(out, "palm.embed_neg", 2, s0, d0);
  add_patch_embed(out, "palm.embed_global", 3, s0, d0);
  for (const char* site : {"palm.enhance_pos", "palm.enhance_neg", "palm.enhance_global", "palm.feature_pos",
                           "palm.feature_neg", "palm.out_image", "palm.out_prompt"}) {
    add_attention_site(out, site, d0);
  }
  add_norm(out, "palm.norm_image", d0);
  add_norm(out, "palm.norm_prompt", d0);

  for (int s = 0; s < 4; ++s) {
    add_dense(out, "fuse.proj" + std::to_string(s), cfg.stage_dims[static_cast<std::size_t>(s)], cfg.fusion_dim);
  }
  out.push_back({"fuse.conv.w", {cfg.fusion_dim, 4 * cfg.fusion_dim, 1, 1}, InitKind::Uniform, 4 * cfg.fusion_dim});
  add_norm(out, "fuse.norm", cfg.fusion_dim);
  add_dense(out, "decode.fc1", cfg.fusion_dim, cfg.decoder_hidden);
  add_dense(out, "decode.fc2", cfg.decoder_hidden, 1);
  add_dense(out, "tsip.fc1", 1, cfg.tsip_hidden);
  add_dense(out, "tsip.fc2", cfg.tsip_hidden, 1);
  return out;
}

ParamStore<float> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore<float> store;
  for (const ParamSpec& spec : parameter_specs(cfg)) {
    TensorF t(spec.shape);
    switch (spec.init) {
      case InitKind::Zeros: break;
      case InitKind::Ones: std::fill(t.data().begin(), t.data().end(), 1.0f); break;
      case InitKind::Uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (float& v : t.data()) v = static_cast<float>(dist(rng));
        break;
      }
    }
    store.add(spec.name, std::move(t));
  }
  return store;
}

template <class T>
void validate_params(const ModelConfig& cfg, const ParamStore<T>& params) {
  const auto specs = parameter_specs(cfg);
  if (specs.size() != params.size()) {
    throw Error(ErrorCode::InvalidArgument, "expected " + std::to_string(specs.size()) + " parameters, got " +
                                                std::to_string(params.size()));
  }
  for (const ParamSpec& spec : specs) {
    const auto& v = params[spec.name];
    if (v.shape() != spec.shape) {
      throw Error(ErrorCode::InvalidArgument, "parameter " + spec.name + " has shape " + to_string(v.shape()) +
                                                  ", config implies " + to_string(spec.shape));
    }
  }
}

template <class T>
Var<T> planes_to_tokens(std::initializer_list<const TensorF*> planes) {
  const TensorF& first = **planes.begin();
  const Index hw = first.size();
  const auto c = static_cast<Index>(planes.size());
  Tensor<T> out({hw, c});
  Index ch = 0;
  for (const TensorF* plane : planes) {
    require_same_shape(first.shape(), plane->shape(), "planes_to_tokens");
    for (Index i = 0; i < hw; ++i) out[i * c + ch] = static_cast<T>((*plane)[i]);
    ++ch;
  }
  return Var<T>(std::move(out));
}

template <class T>
Var<T> norm_layer(const ParamStore<T>& p, const std::string& prefix, const Var<T>& x) {
  return layer_norm(x, p[prefix + ".g"], p[prefix + ".b"], T(1e-5));
}

template <class T>
Var<T> dense(const ParamStore<T>& p, const std::string& prefix, const Var<T>& x) {
  return linear(x, p[prefix + ".w"], p[prefix + ".b"]);
}

template <class T>
Var<T> mlp(const ParamStore<T>& p, const std::string& prefix, const Var<T>& x) {
  return dense(p, prefix + ".fc2", pointwise(dense(p, prefix + ".fc1", x), Pointwise::Gelu));
}

template <class T>
Var<T> patch_embed(const ParamStore<T>& p, const std::string& prefix, const Var<T>& tokens, Index h, Index w,
                   Index stride) {
  return norm_layer(p, prefix + ".norm", dense(p, prefix + ".proj", patchify(tokens, h, w, stride)));
}

template <class T>
Var<T> attention_site(const ParamStore<T>& p, const std::string& prefix, const Var<T>& query_src, const Var<T>& kv_src,
                      const AttentionConfig& cfg) {
  return attention(dense(p, prefix + ".q", query_src), dense(p, prefix + ".k", kv_src), dense(p, prefix + ".v", kv_src),
                   cfg);
}

#define PEMED_INSTANTIATE_LAYERS(T)                                                                                 \
  template Var<T> planes_to_tokens<T>(std::initializer_list<const TensorF*>);                                     \
  template void validate_params<T>(const ModelConfig&, const ParamStore<T>&);                                      \
  template Var<T> norm_layer<T>(const ParamStore<T>&, const std::string&, const Var<T>&);                          \
  template Var<T> dense<T>(const ParamStore<T>&, const std::string&, const Var<T>&);                               \
  template Var<T> mlp<T>(const ParamStore<T>&, const std::string&, const Var<T>&);                                 \
  template Var<T> patch_embed<T>(const ParamStore<T>&, const std::string&, const Var<T>&, Index, Index, Index);    \
  template Var<T> attention_site<T>(const ParamStore<T>&, const std::string&, const Var<T>&, const Var<T>&,        \
                                    const AttentionConfig&);

PEMED_INSTANTIATE_LAYERS(float)
PEMED_INSTANTIATE_LAYERS(double)

#undef PEMED_INSTANTIATE_LAYERS

}  // namespace pemed
