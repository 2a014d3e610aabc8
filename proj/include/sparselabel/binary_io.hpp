#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sparselabel::binio {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("unexpected end of binary stream");
  return value;
}

inline void put_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 4); }

inline void expect_magic(std::istream& in, std::string_view magic) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::string_view(buf, 4) != magic) {
    throw std::runtime_error("bad magic: expected \"" + std::string(magic) + "\"");
  }
}

}  // namespace sparselabel::binio
