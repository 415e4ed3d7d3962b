#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ucs/errors.hpp"

namespace ucs::detail {

class LittleEndianWriter {
 public:
  explicit LittleEndianWriter(std::ostream& os) : os_(os) {}

  template <typename U>
  void put(U value) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      os_.put(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
  }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_bytes(const std::string& s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }

 private:
  std::ostream& os_;
};

class LittleEndianReader {
 public:
  LittleEndianReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  template <typename U>
  U get() {
    static_assert(std::is_unsigned_v<U>);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const int c = is_.get();
      if (c == std::char_traits<char>::eof()) truncated();
      value |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(c)) << (8 * i));
    }
    return value;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_bytes(std::size_t n) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) truncated();
    return s;
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void truncated() const { throw FormatError(what_ + ": truncated input"); }
  [[noreturn]] void fail(const std::string& why) const { throw FormatError(what_ + ": " + why); }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace ucs::detail
