#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "sloclas/error.hpp"

namespace sloclas::binary {

template <typename T>
  requires std::is_arithmetic_v<T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(T));
}

/// Reads one little-endian value; a short read is a format error naming `what`.
template <typename T>
  requires std::is_arithmetic_v<T>
T read_le(std::istream& in, const char* what) {
  std::array<char, sizeof(T)> bytes;
  in.read(bytes.data(), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw Error(Errc::format, std::string("truncated while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <typename T>
  requires std::is_arithmetic_v<T>
void write_le_array(std::ostream& out, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) write_le(out, v);
  }
}

template <typename T>
  requires std::is_arithmetic_v<T>
void read_le_array(std::istream& in, std::span<T> values, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (in.gcount() != static_cast<std::streamsize>(values.size_bytes()))
      throw Error(Errc::format, std::string("truncated while reading ") + what);
  } else {
    for (T& v : values) v = read_le<T>(in, what);
  }
}

inline void write_tag(std::ostream& out, const char (&tag)[5]) { out.write(tag, 4); }

inline std::string read_tag(std::istream& in, const char* what) {
  std::string tag(4, '\0');
  in.read(tag.data(), 4);
  if (in.gcount() != 4) throw Error(Errc::format, std::string("truncated while reading ") + what);
  return tag;
}

}  // namespace sloclas::binary
