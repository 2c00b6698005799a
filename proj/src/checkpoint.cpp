#include "pemed/checkpoint.hpp"

#include <bit>
#include <cstdio>

#include "pemed/layers.hpp"

namespace pemed {

namespace {

constexpr char kMagic[4] = {'P', 'E', 'M', 'D'};

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_string(Bytes& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::DecodeError, "checkpoint truncated");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    const auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }

  std::string str() {
    const auto b = take(u32());
    return std::string(b.begin(), b.end());
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Bytes serialize_checkpoint(const ModelConfig& cfg, const ParamStore<float>& params) {
  validate_params(cfg, params);
  Bytes out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_string(out, format_key_values(cfg.to_key_values()));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, var] : params) {
    put_string(out, name);
    const TensorF& t = var.value();
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw Error(ErrorCode::DecodeError, "not a checkpoint (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::UnsupportedFormat, "checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_key_values(parse_key_values(in.str()));
  ckpt.config.validate();
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    const std::uint32_t rank = in.u32();
    if (rank == 0 || rank > 8) throw Error(ErrorCode::DecodeError, "tensor " + name + " has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(in.u32());
    const Index n = numel(shape);
    if (n <= 0 || n > (Index{1} << 30)) throw Error(ErrorCode::DecodeError, "tensor " + name + " has bad dims");
    std::vector<float> data(static_cast<std::size_t>(n));
    for (float& v : data) v = std::bit_cast<float>(in.u32());
    ckpt.params.add(name, TensorF(std::move(shape), std::move(data)));
  }
  if (!in.done()) throw Error(ErrorCode::DecodeError, "trailing bytes after checkpoint");
  validate_params(ckpt.config, ckpt.params);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParamStore<float>& params) {
  write_file(path, serialize_checkpoint(cfg, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

std::string checkpoint_id(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pemed
