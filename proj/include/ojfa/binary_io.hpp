#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ojfa {

// Little-endian encoder for the OJFW/OJFC/OJFS artifacts.
class ByteWriter {
 public:
  void Magic(std::string_view four_cc);
  void U32(std::uint32_t v);
  void U64(std::uint64_t v);
  void F32(double v);
  void F32s(std::span<const double> values);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> Take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian decoder; every failure is a FormatError
// carrying the offending byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void ExpectMagic(std::string_view four_cc);
  std::uint32_t U32(std::string_view what);
  std::uint64_t U64(std::string_view what);
  double F32(std::string_view what);
  void F32s(std::span<double> out, std::string_view what);
  void ExpectEnd();

  std::uint64_t offset() const { return offset_; }

 private:
  void Need(std::size_t n, std::string_view what);

  std::span<const std::uint8_t> bytes_;
  std::uint64_t offset_ = 0;
};

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const std::uint8_t> bytes);

}  // namespace ojfa
