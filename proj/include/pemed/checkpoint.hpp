#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "PEMD"                      4-byte magic
//   u32 version                 currently 1
//   u32 n, n bytes              model config as `key = value` lines
//   u32 count                   number of tensors, in name order
//   per tensor:
//     u32 n, n bytes            name
//     u32 rank, rank x u32      dims
//     f32 x prod(dims)          row-major values

#include <filesystem>
#include <span>
#include <string>

#include "pemed/config.hpp"
#include "pemed/image_io.hpp"
#include "pemed/params.hpp"

namespace pemed {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamStore<float> params;
};

Bytes serialize_checkpoint(const ModelConfig& cfg, const ParamStore<float>& params);
/// DECODE_ERROR on malformed bytes; INVALID_ARGUMENT when tensors do not match the config.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParamStore<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a of the serialized bytes, as 16 hex digits.
std::string checkpoint_id(std::span<const std::uint8_t> bytes);

}  // namespace pemed
