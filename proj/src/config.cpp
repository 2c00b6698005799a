#include "pemed/config.hpp"

#include "kv_parse.hpp"

#include <boost/program_options/options_description.hpp>
#include <boost/program_options/parsers.hpp>
#include <sstream>

namespace pemed {

namespace po = boost::program_options;

using namespace detail;

KeyValues parse_key_values(std::istream& in) {
  po::options_description none;
  const auto parsed = po::parse_config_file(in, none, /*allow_unregistered=*/true);
  KeyValues out;
  for (const auto& opt : parsed.options) {
    out[opt.string_key] = opt.value.empty() ? std::string() : opt.value.front();
  }
  return out;
}

KeyValues parse_key_values(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_key_values(in);
}

std::string format_key_values(const KeyValues& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

ModuleFlags ablation_flags(std::string_view variant) {
  ModuleFlags f{false, false, false, false};
  if (variant == "Baseline") return f;
  if (variant == "Baseline-SL") { f.self_loop = true; return f; }
  if (variant == "Baseline-I") { f.palm_i = true; return f; }
  if (variant == "Baseline-O") { f.palm_o = true; return f; }
  if (variant == "Baseline-IO") { f.palm_i = f.palm_o = true; return f; }
  if (variant == "Baseline-T") { f.tsip = true; return f; }
  if (variant == "Ours") return ModuleFlags{};
  throw Error(ErrorCode::InvalidArgument, "unknown ablation variant " + std::string(variant));
}

Index ModelConfig::total_stride() const {
  Index s = 1;
  for (Index p : patch_strides) s *= p;
  return s;
}

Index ModelConfig::stage_grid(int stage) const {
  Index side = input_size;
  for (int s = 0; s <= stage; ++s) side /= patch_strides[static_cast<std::size_t>(s)];
  return side;
}

AttentionConfig ModelConfig::stage_attention(int stage) const {
  const auto s = static_cast<std::size_t>(stage);
  return AttentionConfig{stage_dims[s], stage_heads[s], attention_scale};
}

void ModelConfig::validate() const {
  // Feature grids sit at 1/4, 1/8, 1/16 and 1/32 of the input.
  if (patch_strides != std::array<Index, 4>{4, 2, 2, 2}) {
    throw Error(ErrorCode::InvalidArgument, "patch_strides must be 4,2,2,2 (grids at 1/4..1/32 of the input)");
  }
  if (input_size <= 0 || input_size % total_stride() != 0) {
    throw Error(ErrorCode::BadGeometry, "input_size " + std::to_string(input_size) + " must be a positive multiple of " +
                                            std::to_string(total_stride()));
  }
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_dims[s] <= 0 || stage_depths[s] < 0 || stage_heads[s] <= 0 || stage_dims[s] % stage_heads[s] != 0) {
      throw Error(ErrorCode::InvalidArgument, "stage " + std::to_string(s) + ": heads must divide a positive width");
    }
  }
  if (fusion_dim <= 0 || decoder_hidden <= 0 || tsip_hidden <= 0 || mlp_ratio <= 0) {
    throw Error(ErrorCode::InvalidArgument, "fusion_dim, decoder_hidden, tsip_hidden and mlp_ratio must be positive");
  }
  if (!(disk_radius >= 0)) throw Error(ErrorCode::InvalidArgument, "disk_radius must be >= 0");
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"input_size", std::to_string(input_size)},
      {"stage_dims", format_quad(stage_dims)},
      {"stage_depths", format_quad(stage_depths)},
      {"stage_heads", format_quad(stage_heads)},
      {"patch_strides", format_quad(patch_strides)},
      {"fusion_dim", std::to_string(fusion_dim)},
      {"decoder_hidden", std::to_string(decoder_hidden)},
      {"mlp_ratio", std::to_string(mlp_ratio)},
      {"disk_radius", format_double(disk_radius)},
      {"tsip_hidden", std::to_string(tsip_hidden)},
      {"attention_scale", attention_scale == ScaleMode::Dk ? "dk" : "sqrt_dk"},
      {"tsip_centered", tsip_centered ? "true" : "false"},
      {"enable_self_loop", flags.self_loop ? "true" : "false"},
      {"enable_palm_i", flags.palm_i ? "true" : "false"},
      {"enable_palm_o", flags.palm_o ? "true" : "false"},
      {"enable_tsip", flags.tsip ? "true" : "false"},
  };
}

const std::set<std::string>& ModelConfig::keys() {
  static const std::set<std::string> k = [] {
    std::set<std::string> out;
    for (const auto& [key, value] : ModelConfig{}.to_key_values()) out.insert(key);
    out.insert("variant");
    return out;
  }();
  return k;
}

ModelConfig ModelConfig::from_key_values(const KeyValues& e) {
  ModelConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = e.find(key);
    return it == e.end() ? nullptr : &it->second;
  };
  if (auto* v = get("input_size")) c.input_size = parse_int("input_size", *v);
  if (auto* v = get("stage_dims")) c.stage_dims = parse_quad("stage_dims", *v);
  if (auto* v = get("stage_depths")) c.stage_depths = parse_quad("stage_depths", *v);
  if (auto* v = get("stage_heads")) c.stage_heads = parse_quad("stage_heads", *v);
  if (auto* v = get("patch_strides")) c.patch_strides = parse_quad("patch_strides", *v);
  if (auto* v = get("fusion_dim")) c.fusion_dim = parse_int("fusion_dim", *v);
  if (auto* v = get("decoder_hidden")) c.decoder_hidden = parse_int("decoder_hidden", *v);
  if (auto* v = get("mlp_ratio")) c.mlp_ratio = parse_int("mlp_ratio", *v);
  if (auto* v = get("disk_radius")) c.disk_radius = parse_double("disk_radius", *v);
  if (auto* v = get("tsip_hidden")) c.tsip_hidden = parse_int("tsip_hidden", *v);
  if (auto* v = get("attention_scale")) {
    if (*v == "dk") {
      c.attention_scale = ScaleMode::Dk;
    } else if (*v == "sqrt_dk") {
      c.attention_scale = ScaleMode::SqrtDk;
    } else {
      throw Error(ErrorCode::InvalidArgument, "attention_scale must be dk or sqrt_dk");
    }
  }
  if (auto* v = get("tsip_centered")) c.tsip_centered = parse_bool("tsip_centered", *v);
  // A named variant sets all four flags; individual keys may then override.
  if (auto* v = get("variant")) c.flags = ablation_flags(*v);
  if (auto* v = get("enable_self_loop")) c.flags.self_loop = parse_bool("enable_self_loop", *v);
  if (auto* v = get("enable_palm_i")) c.flags.palm_i = parse_bool("enable_palm_i", *v);
  if (auto* v = get("enable_palm_o")) c.flags.palm_o = parse_bool("enable_palm_o", *v);
  if (auto* v = get("enable_tsip")) c.flags.tsip = parse_bool("enable_tsip", *v);
  return c;
}

ModelConfig ModelConfig::full_scale_preset(Index input_size) {
  ModelConfig c;
  c.input_size = input_size;
  c.stage_dims = {32, 64, 160, 256};
  c.stage_heads = {1, 2, 5, 8};
  c.fusion_dim = 256;
  c.decoder_hidden = 256;
  c.validate();
  return c;
}

}  // namespace pemed
