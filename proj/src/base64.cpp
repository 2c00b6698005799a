#include "pemed/base64.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include "pemed/error.hpp"

namespace pemed {

namespace it = boost::archive::iterators;

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  using Encoder = it::base64_from_binary<it::transform_width<const std::uint8_t*, 6, 8>>;
  std::string out(Encoder(bytes.data()), Encoder(bytes.data() + bytes.size()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

Bytes base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' ||
                    c == '/' || c == '=';
    if (!ok) throw Error(ErrorCode::DecodeError, "invalid base64 character");
    clean.push_back(c);
  }
  std::size_t pad = 0;
  while (!clean.empty() && clean.back() == '=') {
    clean.pop_back();
    ++pad;
  }
  if (pad > 2 || clean.find('=') != std::string::npos || clean.size() % 4 == 1) {
    throw Error(ErrorCode::DecodeError, "malformed base64 length or padding");
  }
  using Decoder = it::transform_width<it::binary_from_base64<std::string::const_iterator>, 8, 6>;
  const std::size_t out_size = clean.size() * 3 / 4;
  Bytes out;
  out.reserve(out_size);
  Decoder d(clean.cbegin());
  for (std::size_t i = 0; i < out_size; ++i, ++d) out.push_back(static_cast<std::uint8_t>(*d));
  return out;
}

}  // namespace pemed
