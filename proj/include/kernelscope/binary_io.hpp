// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/common.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <unistd.h>

namespace kernelscope::io {

namespace fs = std::filesystem;

/// Appends little-endian encoded values to a byte buffer.
class ByteWriter {
 public:
  void bytes(std::string_view raw) { buffer_.insert(buffer_.end(), raw.begin(), raw.end()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    std::array<char, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    buffer_.insert(buffer_.end(), raw.begin(), raw.end());
  }

  const std::string& data() const { return buffer_; }

 private:
  std::string buffer_;
};

/// Reads little-endian values with bounds checks.
class ByteReader {
 public:
  ByteReader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> raw;
    std::memcpy(raw.data(), data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error("format", source_ + ": truncated file");
  }

  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a temporary file in the same directory, then renames.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + tmp.string());
    out.write(content.data(), std::streamsize(content.size()));
    out.flush();
    if (!out) throw Error("io", "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("io", "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

// KSMAT: magic "KSMAT\0", u32 version, u64 rows, u64 cols, f64 row-major.
inline constexpr std::string_view kMatrixMagic{"KSMAT\0", 6};
inline constexpr std::uint32_t kMatrixVersion = 1;

inline std::string encode_matrix(const Matrix& m) {
  ByteWriter w;
  w.bytes(kMatrixMagic);
  w.put<std::uint32_t>(kMatrixVersion);
  w.put<std::uint64_t>(std::uint64_t(m.rows()));
  w.put<std::uint64_t>(std::uint64_t(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.put<double>(m(r, c));
  return w.data();
}

inline Matrix decode_matrix(ByteReader& r) {
  if (r.bytes(kMatrixMagic.size()) != kMatrixMagic) throw Error("format", r.source() + ": not a KSMAT file");
  const auto version = r.get<std::uint32_t>();
  if (version != kMatrixVersion)
    throw Error("format", r.source() + ": unsupported KSMAT version " + std::to_string(version));
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  if (cols != 0 && rows > r.remaining() / 8 / cols) throw Error("format", r.source() + ": truncated matrix data");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<double>();
  return m;
}

inline void write_matrix(const fs::path& path, const Matrix& m) { write_file_atomic(path, encode_matrix(m)); }

inline Matrix read_matrix(const fs::path& path) {
  ByteReader r(read_file(path), path.string());
  Matrix m = decode_matrix(r);
  if (!r.done()) throw Error("format", path.string() + ": trailing bytes after matrix");
  return m;
}

inline Matrix as_column(const Vector& v) { return v; }
inline Vector as_vector(const Matrix& m) {
  require(m.cols() == 1 || m.rows() == 1, "format", "expected a vector-shaped matrix");
  return Eigen::Map<const Vector>(m.data(), m.size());
}

}  // namespace kernelscope::io
