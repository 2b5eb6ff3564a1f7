#pragma once

// VFEB: the binary embedding matrix format shared with the provider adapter.
//
//   offset  size  field
//   0       4     magic "VFEB"
//   4       4     version (u32, = 1)
//   8       4     dim (u32)
//   12      8     count (u64)
//   20      1     dtype (u8, 0 = float32)
//   21      7     reserved (zero)
//   28      ...   count * dim float32, row-major
//
// All integers and floats are little-endian regardless of host order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cased/error.hpp"

namespace cased {

inline constexpr std::array<char, 4> kVfebMagic{'V', 'F', 'E', 'B'};
inline constexpr std::uint32_t kVfebVersion = 1;
inline constexpr std::size_t kVfebHeaderSize = 28;

struct VfebMatrix {
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::vector<float> values;  // count * dim

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dim, dim);
  }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoError, "read failed: " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot open for writing " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_vfeb(const VfebMatrix& m) {
  if (m.values.size() != m.count * m.dim) {
    fail(ErrorKind::CountMismatch, "matrix holds " + std::to_string(m.values.size()) +
                                       " values, expected count*dim");
  }
  std::string out;
  out.reserve(kVfebHeaderSize + m.values.size() * 4);
  out.append(kVfebMagic.data(), kVfebMagic.size());
  detail::put_le<std::uint32_t>(out, kVfebVersion);
  detail::put_le<std::uint32_t>(out, m.dim);
  detail::put_le<std::uint64_t>(out, m.count);
  out.push_back('\0');               // dtype float32
  out.append(7, '\0');               // reserved
  for (float f : m.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline VfebMatrix decode_vfeb(std::string_view bytes) {
  if (bytes.size() < kVfebHeaderSize) fail(ErrorKind::FormatError, "truncated VFEB header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, kVfebMagic.data(), 4) != 0) fail(ErrorKind::FormatError, "bad VFEB magic");
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != kVfebVersion) {
    fail(ErrorKind::FormatError, "unsupported VFEB version " + std::to_string(version));
  }
  VfebMatrix m;
  m.dim = detail::get_le<std::uint32_t>(p + 8);
  m.count = detail::get_le<std::uint64_t>(p + 12);
  const std::uint8_t dtype = p[20];
  if (dtype != 0) fail(ErrorKind::FormatError, "unsupported VFEB dtype " + std::to_string(dtype));
  if (m.dim == 0 && m.count != 0) fail(ErrorKind::FormatError, "VFEB dim is zero");
  const std::uint64_t payload = bytes.size() - kVfebHeaderSize;
  if (m.dim != 0 && payload / 4 / m.dim != m.count) {
    fail(ErrorKind::FormatError, "VFEB payload size does not match count*dim");
  }
  if (payload != m.count * m.dim * 4) {
    fail(ErrorKind::FormatError, "VFEB payload size does not match count*dim");
  }
  m.values.resize(m.count * m.dim);
  const unsigned char* data = p + kVfebHeaderSize;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(data + 4 * i));
  }
  return m;
}

inline VfebMatrix read_vfeb(const std::filesystem::path& path) {
  return decode_vfeb(detail::read_file_bytes(path));
}

inline void write_vfeb(const std::filesystem::path& path, const VfebMatrix& m) {
  detail::write_file_bytes(path, encode_vfeb(m));
}

}  // namespace cased
