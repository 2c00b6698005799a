#include "pemed/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "pemed/kernels.hpp"

namespace pemed {

namespace {

constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

class PgmHeaderReader {
 public:
  explicit PgmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  Index next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw Error(ErrorCode::DecodeError, "bad PGM header");
    Index value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > (Index{1} << 24)) throw Error(ErrorCode::DecodeError, "PGM header value too large");
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw Error(ErrorCode::DecodeError, "bad PGM header");
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
};

TensorF decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw Error(ErrorCode::DecodeError, "not a P5 PGM");
  PgmHeaderReader reader(bytes);
  const Index width = reader.next_int();
  const Index height = reader.next_int();
  const Index maxval = reader.next_int();
  if (width <= 0 || height <= 0) throw Error(ErrorCode::DecodeError, "PGM has empty dimensions");
  if (maxval != 255) throw Error(ErrorCode::UnsupportedFormat, "only 8-bit PGM (maxval 255) is supported");
  const std::size_t offset = reader.raster_offset();
  const auto count = static_cast<std::size_t>(width * height);
  if (bytes.size() < offset + count) throw Error(ErrorCode::DecodeError, "PGM raster truncated");
  TensorF out({1, height, width});
  for (std::size_t i = 0; i < count; ++i) out[static_cast<Index>(i)] = static_cast<float>(bytes[offset + i]) / 255.0f;
  return out;
}

TensorF decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::DecodeError, std::string("PNG header: ") + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::DecodeError, "PNG body: " + message);
  }
  TensorF out({1, static_cast<Index>(image.height), static_cast<Index>(image.width)});
  for (std::size_t i = 0; i < raster.size(); ++i) out[static_cast<Index>(i)] = static_cast<float>(raster[i]) / 255.0f;
  return out;
}

std::vector<std::uint8_t> quantize(const TensorF& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw Error(ErrorCode::ShapeMismatch, "expected 1xHxW image, got " + to_string(image.shape()));
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(image.size()));
  for (Index i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

}  // namespace

ImageFormat detect_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return ImageFormat::Pgm;
  if (bytes.size() >= 8 && std::equal(std::begin(kPngMagic), std::end(kPngMagic), bytes.begin())) {
    return ImageFormat::Png8;
  }
  throw Error(ErrorCode::UnsupportedFormat, "unrecognized image signature");
}

TensorF load_image(std::span<const std::uint8_t> bytes, ImageFormat format) {
  return format == ImageFormat::Pgm ? decode_pgm(bytes) : decode_png(bytes);
}

TensorF load_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Error(ErrorCode::DecodeError, "empty image payload");
  return load_image(bytes, detect_format(bytes));
}

Bytes encode_pgm(const TensorF& image) {
  const auto raster = quantize(image);
  const std::string header =
      "P5\n" + std::to_string(image.dim(2)) + " " + std::to_string(image.dim(1)) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), raster.begin(), raster.end());
  return out;
}

Bytes encode_png(const TensorF& image) {
  const auto raster = quantize(image);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(2));
  img.height = static_cast<png_uint_32>(image.dim(1));
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raster.data(), 0, nullptr)) {
    throw Error(ErrorCode::Io, std::string("PNG encode: ") + img.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raster.data(), 0, nullptr)) {
    throw Error(ErrorCode::Io, std::string("PNG encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

TensorF resize_bilinear(const TensorF& image, Index height, Index width) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw Error(ErrorCode::ShapeMismatch, "expected 1xHxW image, got " + to_string(image.shape()));
  }
  if (image.dim(1) == height && image.dim(2) == width) return image;
  TensorF out({1, height, width});
  kernels::upsample_bilinear_forward<float>(image.data(), out.data(), image.dim(1), image.dim(2), 1, height, width);
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace pemed
