#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "scca/error.hpp"
#include "scca/tensor.hpp"

namespace scca {

// SCTF container: "SCTF" | version u8 (0x01) | dtype u8 (0=f32, 1=f64) |
// rank u8 | rank × u64le dims | row-major little-endian scalar data.

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of() {
  return sizeof(T) == 4 ? Dtype::f32 : Dtype::f64;
}

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

namespace detail {

inline void put_u64le(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void put_scalar_le(std::string& buf, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_scalar_le(const unsigned char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace detail

template <typename T>
void write_tensor(const std::string& path, const Tensor<T>& t) {
  std::string buf;
  buf.reserve(16 + t.rank() * 8 + t.size() * sizeof(T));
  buf += "SCTF";
  buf.push_back(0x01);
  buf.push_back(static_cast<char>(dtype_of<T>()));
  buf.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u64le(buf, d);
  for (const T v : t.values()) detail::put_scalar_le(buf, v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

/// Reads only the header; lets callers dispatch on the stored scalar type.
inline Dtype peek_dtype(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 7) throw IoError(path + ": truncated header, file has only " +
                                      std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), "SCTF", 4) != 0) throw IoError(path + ": unknown magic bytes");
  if (bytes[4] != 0x01) throw IoError(path + ": unsupported format version");
  if (bytes[5] > 1) throw IoError(path + ": unknown dtype byte");
  return static_cast<Dtype>(bytes[5]);
}

template <typename T>
Tensor<T> read_tensor(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t off = 0;
  auto need = [&](std::size_t count, const char* what) {
    if (bytes.size() - off < count) {
      throw IoError(path + ": truncated while reading " + what + " at byte offset " +
                    std::to_string(off) + " (need " + std::to_string(count) + ", have " +
                    std::to_string(bytes.size() - off) + ")");
    }
  };
  need(4, "magic");
  if (std::memcmp(bytes.data(), "SCTF", 4) != 0) throw IoError(path + ": unknown magic bytes");
  off = 4;
  need(1, "version");
  if (bytes[off] != 0x01) {
    throw IoError(path + ": unsupported format version " + std::to_string(bytes[off]));
  }
  ++off;
  need(1, "dtype");
  if (bytes[off] > 1) throw IoError(path + ": unknown dtype byte");
  const Dtype dtype = static_cast<Dtype>(bytes[off]);
  if (dtype != dtype_of<T>()) {
    throw IoError(path + ": stored dtype is " + dtype_name(dtype) + ", expected " +
                  dtype_name(dtype_of<T>()));
  }
  ++off;
  need(1, "rank");
  const std::size_t rank = bytes[off];
  ++off;
  Shape shape(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    need(8, "dimension");
    shape[d] = static_cast<std::size_t>(detail::get_u64le(bytes.data() + off));
    off += 8;
  }
  const std::size_t count = numel(shape);
  std::vector<T> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    need(sizeof(T), "scalar data");
    data[i] = detail::get_scalar_le<T>(bytes.data() + off);
    off += sizeof(T);
  }
  if (off != bytes.size()) {
    throw IoError(path + ": trailing bytes after tensor payload at offset " + std::to_string(off));
  }
  return Tensor<T>::from(std::move(shape), std::move(data));
}

}  // namespace scca
