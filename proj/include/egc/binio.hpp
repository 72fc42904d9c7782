#pragma once

#include "egc/common.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace egc::binio {

// Little-endian wire format throughout. On big-endian hosts values are
// byte-swapped; on little-endian hosts these compile to plain copies.

template <typename T>
inline T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    T out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }
  return v;
}

template <typename T>
inline T from_le(T v) {
  return to_le(v);
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!os) throw DataError(DataErrorCode::bad_value, "write failed");
}

inline void read_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError(DataErrorCode::truncated, std::string("truncated file while reading ") + what);
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }
inline void write_u32(std::ostream& os, std::uint32_t v) {
  v = to_le(v);
  write_bytes(os, &v, 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_le(v);
  write_bytes(os, &v, 8);
}
inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  read_bytes(is, &v, 1, what);
  return v;
}
inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  read_bytes(is, &v, 4, what);
  return from_le(v);
}
inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v;
  read_bytes(is, &v, 8, what);
  return from_le(v);
}
inline double read_f64(std::istream& is, const char* what) {
  std::uint64_t bits = read_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void write_f64_array(std::ostream& os, const double* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    write_bytes(os, data, n * 8);
  } else {
    for (std::size_t i = 0; i < n; ++i) write_f64(os, data[i]);
  }
}

inline void read_f64_array(std::istream& is, double* data, std::size_t n, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    read_bytes(is, data, n * 8, what);
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = read_f64(is, what);
  }
}

inline void write_magic(std::ostream& os, const char magic[9]) { write_bytes(os, magic, 8); }

inline void expect_magic(std::istream& is, const char magic[9], const char* what) {
  char buf[8];
  is.read(buf, 8);
  if (is.gcount() != 8 || std::memcmp(buf, magic, 8) != 0)
    throw DataError(DataErrorCode::bad_magic,
                    std::string("bad magic: not a ") + what + " file");
}

}  // namespace egc::binio
