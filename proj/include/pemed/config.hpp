#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "pemed/autograd.hpp"
#include "pemed/prompt.hpp"

namespace pemed {

/// Flat `key = value` entries with `#` comments.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& entries);

/// Which prompt-enhancement components are active.
struct ModuleFlags {
  bool self_loop = true;
  bool palm_i = true;
  bool palm_o = true;
  bool tsip = true;

  bool palm() const { return palm_i || palm_o; }
  friend bool operator==(const ModuleFlags&, const ModuleFlags&) = default;
};

/// Flag sets for the named ablation variants: "Baseline", "Baseline-SL",
/// "Baseline-I", "Baseline-O", "Baseline-IO", "Baseline-T" and "Ours".
ModuleFlags ablation_flags(std::string_view variant);

struct ModelConfig {
  Index input_size = 64;
  std::array<Index, 4> stage_dims{16, 32, 64, 128};
  std::array<Index, 4> stage_depths{2, 2, 2, 2};
  std::array<Index, 4> stage_heads{1, 2, 4, 8};
  std::array<Index, 4> patch_strides{4, 2, 2, 2};
  Index fusion_dim = 64;
  Index decoder_hidden = 64;
  Index mlp_ratio = 4;
  double disk_radius = kDefaultDiskRadius;
  Index tsip_hidden = 16;
  ScaleMode attention_scale = ScaleMode::Dk;
  /// Subtract 0.5 from the temporal sigmoid term so it is centered on zero.
  bool tsip_centered = false;
  ModuleFlags flags;

  /// Product of all patch strides; the input side must be a multiple of it.
  Index total_stride() const;
  /// Side length of the stage-s token grid (s in 0..3).
  Index stage_grid(int stage) const;
  AttentionConfig stage_attention(int stage) const;

  /// Throws INVALID_ARGUMENT or BAD_GEOMETRY on violated invariants.
  void validate() const;

  KeyValues to_key_values() const;
  /// Unknown keys are ignored; missing keys keep their defaults.
  static ModelConfig from_key_values(const KeyValues& entries);
  static const std::set<std::string>& keys();

  /// 224 or 256 pixel configuration with wider stages.
  static ModelConfig full_scale_preset(Index input_size);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace pemed
