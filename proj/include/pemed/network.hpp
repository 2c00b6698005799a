#pragma once

// Segmentation network F: four transformer stages over token grids at 1/4,
// 1/8, 1/16 and 1/32 of the input, a fusion block (1x1 convolution plus layer
// norm over the upsampled multi-level features) and a per-pixel MLP decoder.
// The temporal term of TSIP is applied on top of F's logits by tsip_combine().

#include <array>
#include <optional>

#include "pemed/layers.hpp"
#include "pemed/prompt.hpp"

namespace pemed {

template <class T>
struct EncoderFeatures {
  /// Stage outputs as [grid*grid x stage_dim] token matrices.
  std::array<Var<T>, 4> stages;
};

template <class T>
class Network {
 public:
  /// Validates the config and that params match its layout.
  Network(ModelConfig cfg, ParamStore<T> params);

  const ModelConfig& config() const noexcept { return cfg_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  ParamStore<T>& params() noexcept { return params_; }

  /// One pre-norm block: x += attn(LN(x)); x += MLP(LN(x)).
  Var<T> transformer_block(const Var<T>& tokens, int stage, Index block) const;

  /// Runs all stages. When use_palm is set, the stage-1 output is replaced by
  /// the PALM mixture before it feeds stage 2 and the fusion block.
  EncoderFeatures<T> forward_encoder(const PromptMaps& maps, bool use_palm) const;

  /// Fused features at 1/4 resolution as [grid*grid x fusion_dim].
  Var<T> fuse_multilevel(const EncoderFeatures<T>& feats) const;

  /// Per-pixel MLP to one channel, upsampled x4 to 1 x H x W raw logits.
  Var<T> decode_mask(const Var<T>& fused) const;

  /// F(I_input): raw logits for the assembled maps, PALM per config flags.
  Var<T> forward(const PromptMaps& maps) const;

  /// O_t = raw + sigmoid(theta(O_{t-1})); returns raw unchanged when o_prev
  /// is absent. theta is the per-pixel 1 -> tsip_hidden -> 1 MLP.
  Var<T> tsip_combine(const Var<T>& raw_logits, const std::optional<Var<T>>& o_prev) const;

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
};

using NetworkF = Network<float>;
using NetworkD = Network<double>;

}  // namespace pemed
