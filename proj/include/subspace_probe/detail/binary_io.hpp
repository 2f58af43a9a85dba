#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "subspace_probe/error.hpp"

namespace subspace_probe::detail {

template <typename T>
T byteswap_value(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
    std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

/// Appends values to `out` as little-endian bytes.
template <typename T>
void append_le(std::vector<char>& out, std::span<const T> values) {
  const std::size_t offset = out.size();
  out.resize(offset + values.size_bytes());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + offset, values.data(), values.size_bytes());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T v = byteswap_value(values[i]);
      std::memcpy(out.data() + offset + i * sizeof(T), &v, sizeof(T));
    }
  }
}

/// Decodes `count` little-endian values starting at byte `offset`.
template <typename T>
std::vector<T> decode_le(std::span<const char> bytes, std::size_t offset,
                         std::size_t count) {
  std::vector<T> values(count);
  std::memcpy(values.data(), bytes.data() + offset, count * sizeof(T));
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) v = byteswap_value(v);
  }
  return values;
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(size);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw Error("short read on " + path.string());
  }
  return bytes;
}

inline void write_file(const std::filesystem::path& path,
                       std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed on " + path.string());
}

inline void write_text(const std::filesystem::path& path,
                       const std::string& text) {
  write_file(path, std::span<const char>(text.data(), text.size()));
}

/// Shortest decimal representation that round-trips.
inline std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace subspace_probe::detail
