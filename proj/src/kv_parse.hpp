#pragma once

// Typed value parsing for flat `key = value` configs.

#include <array>
#include <charconv>
#include <sstream>
#include <string>

#include "pemed/error.hpp"
#include "pemed/tensor.hpp"

namespace pemed::detail {

inline Index parse_int(const std::string& key, const std::string& text) {
  Index value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw Error(ErrorCode::InvalidArgument, key + ": expected integer, got " + text);
  return value;
}

inline double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, key + ": expected number, got " + text);
  }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw Error(ErrorCode::InvalidArgument, key + ": expected boolean, got " + text);
}

inline std::array<Index, 4> parse_quad(const std::string& key, const std::string& text) {
  std::array<Index, 4> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 4) throw Error(ErrorCode::InvalidArgument, key + ": expected 4 comma-separated values");
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    out[i++] = parse_int(key, item);
  }
  if (i != 4) throw Error(ErrorCode::InvalidArgument, key + ": expected 4 comma-separated values");
  return out;
}

inline std::string format_quad(const std::array<Index, 4>& q) {
  return std::to_string(q[0]) + "," + std::to_string(q[1]) + "," + std::to_string(q[2]) + "," + std::to_string(q[3]);
}

inline std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}


}  // namespace pemed::detail
