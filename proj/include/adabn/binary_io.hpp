#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adabn/tensor.hpp"

namespace adabn::io {

// Little-endian encoder for the on-disk formats. Tensors are written as
// u64 rank, u64 extents[rank], f64 values[product(extents)].
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void raw(std::string_view bytes);
  void str(std::string_view s);  // u64 length + bytes
  void tensor(const Tensor& t);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked decoder. Every read that would run past the end throws
// TruncationError naming the expected and available byte counts.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8(std::string_view what);
  std::uint32_t u32(std::string_view what);
  std::uint64_t u64(std::string_view what);
  std::int64_t i64(std::string_view what);
  double f64(std::string_view what);
  std::string raw(std::size_t n, std::string_view what);
  std::string str(std::string_view what);
  Tensor tensor(std::string_view what);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void require(std::size_t n, std::string_view what);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Writes through a temporary sibling and renames, so readers never observe a
// partial file. Refuses to replace an existing file unless `overwrite`.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes, bool overwrite);
void write_text_file(const std::filesystem::path& path, std::string_view text, bool overwrite);

}  // namespace adabn::io
