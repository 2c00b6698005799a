#pragma once

// Prompt Attention Learning Module.
//
// PALM-I embeds the click maps into three token sets and enhances them:
//   M_pos    = embed(I_pos, I_prev)
//   M_neg    = embed(I_neg, I_prev)
//   M_global = embed(I_pos, I_neg, I_prev)
//   M^_pos    = theta(M_neg, M_pos, M_pos)
//   M^_neg    = theta(M_pos, M_neg, M_neg)
//   M^_global = theta(M_global, M_global, M_global)
//   E_p       = theta(M^_pos, M^_global, M^_global) + theta(M^_neg, M^_global, M^_global)
// PALM-O mixes E_p into the stage-1 image tokens F_I:
//   EP = F_I + norm(theta(F_I, E_p, E_p)) + E_p + norm(theta(E_p, F_I, F_I))
// where theta(Q, K, V) = softmax(Q K^T / d_k) V after per-site projections.

#include "pemed/layers.hpp"

namespace pemed {

template <class T>
struct PromptEmbeddings {
  Var<T> pos;
  Var<T> neg;
  Var<T> global;
};

template <class T>
PromptEmbeddings<T> palm_i_embed(const ParamStore<T>& p, const ModelConfig& cfg, const PromptMaps& maps);

/// Returns {M^_pos, M^_neg}.
template <class T>
std::pair<Var<T>, Var<T>> enhance_prompts(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& m_pos,
                                          const Var<T>& m_neg);

template <class T>
Var<T> enhance_global(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& m_global);

template <class T>
Var<T> prompt_feature(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& pos_hat, const Var<T>& neg_hat,
                      const Var<T>& global_hat);

template <class T>
Var<T> palm_o(const ParamStore<T>& p, const ModelConfig& cfg, const Var<T>& f_image, const Var<T>& e_p);

/// Full module honoring the flags. With PALM-I off, E_p is the unenhanced
/// M_global; with PALM-O off, EP = F_I + E_p. Requires cfg.flags.palm().
template <class T>
Var<T> palm_forward(const ParamStore<T>& p, const ModelConfig& cfg, const PromptMaps& maps, const Var<T>& f_image);

}  // namespace pemed
