#include "adabn/binary_io.hpp"

#include <bit>
#include <fstream>
#include <system_error>

#include "adabn/errors.hpp"

namespace adabn::io {

namespace {

constexpr std::uint64_t kMaxRank = 8;

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::i64(std::int64_t v) { put_le(buf_, static_cast<std::uint64_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  raw(s);
}

void ByteWriter::tensor(const Tensor& t) {
  u64(t.rank());
  for (auto e : t.shape()) u64(e);
  for (double v : t.data()) f64(v);
}

void ByteReader::require(std::size_t n, std::string_view what) {
  if (remaining() < n) {
    throw TruncationError("truncated " + std::string(what) + ": expected " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", only " + std::to_string(remaining()) + " available");
  }
}

std::uint8_t ByteReader::u8(std::string_view what) {
  require(1, what);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32(std::string_view what) {
  require(4, what);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64(std::string_view what) {
  require(8, what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

std::int64_t ByteReader::i64(std::string_view what) { return static_cast<std::int64_t>(u64(what)); }
double ByteReader::f64(std::string_view what) { return std::bit_cast<double>(u64(what)); }

std::string ByteReader::raw(std::size_t n, std::string_view what) {
  require(n, what);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::string ByteReader::str(std::string_view what) {
  const std::uint64_t n = u64(what);
  return raw(static_cast<std::size_t>(n), what);
}

Tensor ByteReader::tensor(std::string_view what) {
  const std::uint64_t rank = u64(what);
  if (rank == 0 || rank > kMaxRank) {
    throw ValidationError(std::string(what) + ": tensor rank " + std::to_string(rank) + " outside [1, 8]");
  }
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const std::uint64_t e = u64(what);
    if (e == 0) throw ValidationError(std::string(what) + ": zero tensor extent");
    if (count > (std::uint64_t{1} << 40) / e) throw ValidationError(std::string(what) + ": tensor too large");
    count *= e;
    shape.push_back(static_cast<std::size_t>(e));
  }
  require(static_cast<std::size_t>(count * 8), what);
  std::vector<double> values(static_cast<std::size_t>(count));
  for (auto& v : values) v = f64(what);
  return Tensor(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes, bool overwrite) {
  std::error_code ec;
  if (!overwrite && std::filesystem::exists(path, ec)) {
    throw IoError("refusing to overwrite existing file '" + path.string() + "'");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_text_file(const std::filesystem::path& path, std::string_view text, bool overwrite) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), overwrite);
}

}  // namespace adabn::io
