#pragma once

// Little-endian framing helpers shared by the adapter and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "garden/errors.hpp"

namespace garden::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  void floats(const std::vector<float>& v) { bytes(v.data(), v.size() * sizeof(float)); }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

/// Bounds-checked reader; running past the end is a ParseError naming the
/// offset where the missing data should have started.
class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

  void bytes(void* out, std::size_t n) {
    if (n > data_.size() - pos_) {
      throw CorruptionError(what_ + ": truncated at offset " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                       " bytes, " + std::to_string(data_.size() - pos_) + " left)");
    }
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<float> floats(std::size_t n) {
    if (n > (data_.size() - pos_) / sizeof(float)) bytes(nullptr, n * sizeof(float));  // throws
    std::vector<float> v(n);
    bytes(v.data(), n * sizeof(float));
    return v;
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_binary_file(const std::string& path);
/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
void write_binary_file(const std::string& path, const std::string& bytes);

}  // namespace garden::detail
