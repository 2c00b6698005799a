#include "pemed/rle.hpp"

#include <charconv>

#include "pemed/error.hpp"

namespace pemed {

namespace {

[[noreturn]] void malformed(std::string_view text, const std::string& why) {
  throw Error(ErrorCode::DecodeError, "bad mask RLE \"" + std::string(text.substr(0, 64)) + "\": " + why);
}

Index read_number(std::string_view whole, std::string_view& rest, char terminator, bool terminator_optional) {
  Index value = -1;
  const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), value);
  if (ec != std::errc() || value < 0) malformed(whole, "expected a non-negative integer");
  rest.remove_prefix(static_cast<std::size_t>(ptr - rest.data()));
  if (rest.empty()) {
    if (!terminator_optional) malformed(whole, std::string("expected '") + terminator + "'");
    return value;
  }
  if (rest.front() != terminator) malformed(whole, std::string("expected '") + terminator + "'");
  rest.remove_prefix(1);
  return value;
}

}  // namespace

std::string encode_mask_rle(const TensorF& mask) {
  Index h = 0, w = 0;
  if (mask.rank() == 3 && mask.dim(0) == 1) {
    h = mask.dim(1);
    w = mask.dim(2);
  } else if (mask.rank() == 2) {
    h = mask.dim(0);
    w = mask.dim(1);
  } else {
    throw Error(ErrorCode::ShapeMismatch, "mask must be HxW or 1xHxW, got " + to_string(mask.shape()));
  }
  std::string out = std::to_string(h) + "," + std::to_string(w) + "|";
  bool first = true;
  const Index n = mask.size();
  for (Index i = 0; i < n;) {
    if (mask[i] < 0.5f) {
      ++i;
      continue;
    }
    Index j = i;
    while (j < n && mask[j] >= 0.5f) ++j;
    if (!first) out += ';';
    out += std::to_string(i) + "," + std::to_string(j - i);
    first = false;
    i = j;
  }
  return out;
}

TensorF decode_mask_rle(std::string_view text) {
  std::string_view rest = text;
  const Index h = read_number(text, rest, ',', false);
  const Index w = read_number(text, rest, '|', false);
  if (h <= 0 || w <= 0) malformed(text, "dimensions must be positive");
  TensorF out({1, h, w});
  const Index n = h * w;
  Index covered = 0;
  while (!rest.empty()) {
    const Index start = read_number(text, rest, ',', false);
    const Index len = read_number(text, rest, ';', true);
    if (len <= 0) malformed(text, "run length must be positive");
    if (start < covered) malformed(text, "runs overlap or are out of order");
    if (start > n || len > n - start) malformed(text, "run exceeds the mask");
    for (Index i = start; i < start + len; ++i) out[i] = 1.0f;
    covered = start + len;
  }
  if (!text.empty() && text.back() == ';') malformed(text, "trailing ';'");
  return out;
}

}  // namespace pemed
