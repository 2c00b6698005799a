#include "pemed/network.hpp"

#include "pemed/palm.hpp"

namespace pemed {

template <class T>
Network<T>::Network(ModelConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  validate_params(cfg_, params_);
}

template <class T>
Var<T> Network<T>::transformer_block(const Var<T>& tokens, int stage, Index block) const {
  const auto s = static_cast<std::size_t>(stage);
  if (tokens.value().rank() != 2 || tokens.shape()[1] != cfg_.stage_dims[s]) {
    throw Error(ErrorCode::ShapeMismatch, "stage " + std::to_string(stage) + " block expects width " +
                                              std::to_string(cfg_.stage_dims[s]) + ", got " + to_string(tokens.shape()));
  }
  const std::string prefix = "stage" + std::to_string(stage) + ".block" + std::to_string(block);
  const Var<T> normed = norm_layer(params_, prefix + ".norm1", tokens);
  const Var<T> attended = attention_site(params_, prefix + ".attn", normed, normed, cfg_.stage_attention(stage));
  const Var<T> x = add(tokens, dense(params_, prefix + ".attn.out", attended));
  return add(x, mlp(params_, prefix + ".mlp", norm_layer(params_, prefix + ".norm2", x)));
}

template <class T>
EncoderFeatures<T> Network<T>::forward_encoder(const PromptMaps& maps, bool use_palm) const {
  if (maps.height() != cfg_.input_size || maps.width() != cfg_.input_size) {
    throw Error(ErrorCode::ShapeMismatch, "network expects " + std::to_string(cfg_.input_size) + "x" +
                                              std::to_string(cfg_.input_size) + " maps, got " +
                                              to_string(maps.image.shape()));
  }
  EncoderFeatures<T> feats;
  Var<T> tokens = planes_to_tokens<T>({&maps.image, &maps.pos, &maps.neg, &maps.prev});
  Index grid = cfg_.input_size;
  for (int s = 0; s < 4; ++s) {
    const auto su = static_cast<std::size_t>(s);
    tokens = patch_embed(params_, "stage" + std::to_string(s) + ".embed", tokens, grid, grid, cfg_.patch_strides[su]);
    grid /= cfg_.patch_strides[su];
    for (Index b = 0; b < cfg_.stage_depths[su]; ++b) tokens = transformer_block(tokens, s, b);
    if (s == 0 && use_palm) tokens = palm_forward(params_, cfg_, maps, tokens);
    feats.stages[su] = tokens;
  }
  return feats;
}

template <class T>
Var<T> Network<T>::fuse_multilevel(const EncoderFeatures<T>& feats) const {
  const Index grid0 = cfg_.stage_grid(0);
  std::vector<Var<T>> levels;
  for (int s = 0; s < 4; ++s) {
    const Index g = cfg_.stage_grid(s);
    const Var<T> projected = dense(params_, "fuse.proj" + std::to_string(s), feats.stages[static_cast<std::size_t>(s)]);
    levels.push_back(upsample_bilinear(projected, g, g, grid0, grid0));
  }
  const Var<T> stacked = tokens_to_chw(concat_cols(levels), grid0, grid0);
  const Var<T> conv = conv2d(stacked, params_["fuse.conv.w"], 1, 0);
  return norm_layer(params_, "fuse.norm", chw_to_tokens(conv));
}

template <class T>
Var<T> Network<T>::decode_mask(const Var<T>& fused) const {
  const Index grid0 = cfg_.stage_grid(0);
  if (fused.value().rank() != 2 || fused.shape()[0] != grid0 * grid0 || fused.shape()[1] != cfg_.fusion_dim) {
    throw Error(ErrorCode::ShapeMismatch, "decode_mask expects [" + std::to_string(grid0 * grid0) + "x" +
                                              std::to_string(cfg_.fusion_dim) + "], got " + to_string(fused.shape()));
  }
  const Var<T> coarse = mlp(params_, "decode", fused);
  const Index size = cfg_.input_size;
  return reshape(upsample_bilinear(coarse, grid0, grid0, size, size), {1, size, size});
}

template <class T>
Var<T> Network<T>::forward(const PromptMaps& maps) const {
  return decode_mask(fuse_multilevel(forward_encoder(maps, cfg_.flags.palm())));
}

template <class T>
Var<T> Network<T>::tsip_combine(const Var<T>& raw_logits, const std::optional<Var<T>>& o_prev) const {
  if (!o_prev) return raw_logits;
  require_same_shape(raw_logits.shape(), o_prev->shape(), "tsip_combine");
  const Var<T> column = reshape(*o_prev, {o_prev->value().size(), 1});
  Var<T> memory = pointwise(mlp(params_, "tsip", column), Pointwise::Sigmoid);
  if (cfg_.tsip_centered) memory = add_scalar(memory, T(-0.5));
  return add(raw_logits, reshape(memory, raw_logits.shape()));
}

template class Network<float>;
template class Network<double>;

}  // namespace pemed
