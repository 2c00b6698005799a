#include "pemed/palm.hpp"

namespace pemed {

namespace {

AttentionConfig palm_attention(const ModelConfig& cfg) { return cfg.stage_attention(0); }

template <class T>
void require_tokens_match(const Var<T>& a, const Var<T>& b, const char* what) {
  require_same_shape(a.shape(), b.shape(), what);
}

}  // namespace

template <class T>
PromptEmbeddings<T> palm_i_embed(const ParamStore<T>& p, const ModelConfig& cfg, const PromptMaps& maps) {
  const Index h = maps.height(), w = maps.width();
  const Index stride = cfg.patch_strides[0];
  return {
      patch_embed(p, "palm.embed_pos", planes_to_tokens<T>({&maps.pos, &maps.prev}), h, w, stride),
      patch_embed(p, "palm.embed_neg", planes_to_tokens<T>({&maps.neg, &maps.prev}), h, w, stride),
      patch_embed(p, "palm.embed_global", planes_to_tokens<T>({&maps.pos, &maps.neg, &maps.prev}), h, w, stride),
  };
}

template <class T>
std::pair<Var<T>, Var<T>> enhance_prompts(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& m_pos,
                                          const Var<T>& m_neg) {
  require_tokens_match(m_pos, m_neg, "enhance_prompts");
  const auto attn = palm_attention(cfg);
  return {attention_site(p, "palm.enhance_pos", m_neg, m_pos, attn),
          attention_site(p, "palm.enhance_neg", m_pos, m_neg, attn)};
}

template <class T>
Var<T> enhance_global(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& m_global) {
  return attention_site(p, "palm.enhance_global", m_global, m_global, palm_attention(cfg));
}

template <class T>
Var<T> prompt_feature(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& pos_hat, const Var<T>& neg_hat,
                      const Var<T>& global_hat) {
  require_tokens_match(pos_hat, neg_hat, "prompt_feature");
  require_tokens_match(pos_hat, global_hat, "prompt_feature");
  const auto attn = palm_attention(cfg);
  return add(attention_site(p, "palm.feature_pos", pos_hat, global_hat, attn),
             attention_site(p, "palm.feature_neg", neg_hat, global_hat, attn));
}

template <class T>
Var<T> palm_o(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& f_image, const Var<T>& e_p) {
  require_tokens_match(f_image, e_p, "palm_o");
  const auto attn = palm_attention(cfg);
  const Var<T> image_term = norm_layer(p, "palm.norm_image", attention_site(p, "palm.out_image", f_image, e_p, attn));
  const Var<T> prompt_term =
      norm_layer(p, "palm.norm_prompt", attention_site(p, "palm.out_prompt", e_p, f_image, attn));
  return add(add(add(f_image, image_term), e_p), prompt_term);
}

template <class T>
Var<T> palm_forward(const ParamStore<T>& p, const ModelConfig& cfg, const PromptMaps& maps, const Var<T>& f_image) {
  if (!cfg.flags.palm()) throw Error(ErrorCode::InvalidArgument, "palm_forward with PALM disabled");
  const PromptEmbeddings<T> m = palm_i_embed(p, cfg, maps);
  Var<T> e_p = m.global;
  if (cfg.flags.palm_i) {
    auto [pos_hat, neg_hat] = enhance_prompts(p, cfg, m.pos, m.neg);
    const Var<T> global_hat = enhance_global(p, cfg, m.global);
    e_p = prompt_feature(p, cfg, pos_hat, neg_hat, global_hat);
  }
  if (cfg.flags.palm_o) return palm_o(p, cfg, f_image, e_p);
  return add(f_image, e_p);
}

#define PEMED_INSTANTIATE_PALM(T)                                                                                    \
  template PromptEmbeddings<T> palm_i_embed<T>(const ParamStore<T>&, const ModelConfig&, const PromptMaps&);        \
  template std::pair<Var<T>, Var<T>> enhance_prompts<T>(const ParamStore<T>&, const ModelConfig&, const Var<T>&,    \
                                                        const Var<T>&);                                             \
  template Var<T> enhance_global<T>(const ParamStore<T>&, const ModelConfig&, const Var<T>&);                       \
  template Var<T> prompt_feature<T>(const ParamStore<T>&, const ModelConfig&, const Var<T>&, const Var<T>&,         \
                                    const Var<T>&);                                                                 \
  template Var<T> palm_o<T>(const ParamStore<T>&, const ModelConfig&, const Var<T>&, const Var<T>&);                \
  template Var<T> palm_forward<T>(const ParamStore<T>&, const ModelConfig&, const PromptMaps&, const Var<T>&);

PEMED_INSTANTIATE_PALM(float)
PEMED_INSTANTIATE_PALM(double)

#undef PEMED_INSTANTIATE_PALM

}  // namespace pemed
