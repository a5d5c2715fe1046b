#include "ojfa/binary_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ojfa/error.hpp"

namespace ojfa {

void ByteWriter::Magic(std::string_view four_cc) {
  bytes_.insert(bytes_.end(), four_cc.begin(), four_cc.end());
}

void ByteWriter::U32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::U64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::F32(double v) { U32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

void ByteWriter::F32s(std::span<const double> values) {
  bytes_.reserve(bytes_.size() + 4 * values.size());
  for (double v : values) F32(v);
}

void ByteReader::Need(std::size_t n, std::string_view what) {
  if (bytes_.size() - offset_ < n) {
    throw FormatError("truncated input while reading " + std::string(what) + ": need " +
                          std::to_string(n) + " bytes, " +
                          std::to_string(bytes_.size() - offset_) + " remain",
                      offset_);
  }
}

void ByteReader::ExpectMagic(std::string_view four_cc) {
  Need(four_cc.size(), "magic");
  if (std::memcmp(bytes_.data() + offset_, four_cc.data(), four_cc.size()) != 0) {
    std::string got;
    for (std::size_t i = 0; i < four_cc.size(); ++i) {
      const char c = static_cast<char>(bytes_[offset_ + i]);
      got += (c >= 32 && c < 127) ? c : '?';
    }
    throw FormatError("bad magic: expected `" + std::string(four_cc) + "`, found `" + got + "`",
                      offset_);
  }
  offset_ += four_cc.size();
}

std::uint32_t ByteReader::U32(std::string_view what) {
  Need(4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[offset_ + i]) << (8 * i);
  offset_ += 4;
  return v;
}

std::uint64_t ByteReader::U64(std::string_view what) {
  Need(8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_ + i]) << (8 * i);
  offset_ += 8;
  return v;
}

double ByteReader::F32(std::string_view what) {
  const std::uint64_t at = offset_;
  const float f = std::bit_cast<float>(U32(what));
  if (!std::isfinite(f)) throw FormatError("non-finite value in " + std::string(what), at);
  return static_cast<double>(f);
}

void ByteReader::F32s(std::span<double> out, std::string_view what) {
  Need(4 * out.size(), what);
  for (double& x : out) x = F32(what);
}

void ByteReader::ExpectEnd() {
  if (offset_ != bytes_.size()) {
    throw FormatError(std::to_string(bytes_.size() - offset_) + " trailing bytes", offset_);
  }
}

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void WriteFileBytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace ojfa
