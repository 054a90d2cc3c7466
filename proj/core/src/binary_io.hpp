#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "flilab/error.hpp"

namespace flilab::detail {

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const std::string& what) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T)))
    throw FormatError(FormatErrorCode::truncated, "unexpected end of file while reading " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

inline void put_floats(std::ostream& os, const std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  } else {
    for (float f : v) put_le(os, f);
  }
}

inline void get_floats(std::istream& is, std::vector<float>& v, std::size_t n, const std::string& what) {
  v.resize(n);
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float))))
      throw FormatError(FormatErrorCode::truncated, "unexpected end of file while reading " + what);
  } else {
    for (auto& f : v) f = get_le<float>(is, what);
  }
}

}  // namespace flilab::detail
