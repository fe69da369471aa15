#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fl {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

class OverflowError : public Error {
 public:
  explicit OverflowError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// A federated round received fewer submissions than registered partners.
class MissingPartnerError : public Error {
 public:
  explicit MissingPartnerError(const std::string& msg) : Error(msg) {}
};

// A message violated the asset permission table.
class PermissionViolationError : public Error {
 public:
  explicit PermissionViolationError(const std::string& msg) : Error(msg) {}
};

// Protocol-level inconsistency (round mismatch, duplicate sender, ...).
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& msg) : Error(msg) {}
};

// Little-endian byte serialization. All on-disk and on-bus formats go
// through these two classes so the byte layout is identical everywhere.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u16(std::uint16_t v) { put_int(v, 2); }
  void put_u32(std::uint32_t v) { put_int(v, 4); }
  void put_u64(std::uint64_t v) { put_int(v, 8); }
  void put_f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(bits);
  }
  void put_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) return;
    const auto old_size = buf_.size();
    buf_.resize(old_size + bytes.size());
    std::memcpy(buf_.data() + old_size, bytes.data(), bytes.size());
  }
  void put_magic(const char (&magic)[5]) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(magic[i]));
  }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put_int(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t get_u8() { return static_cast<std::uint8_t>(get_int(1)); }
  std::uint16_t get_u16() { return static_cast<std::uint16_t>(get_int(2)); }
  std::uint32_t get_u32() { return static_cast<std::uint32_t>(get_int(4)); }
  std::uint64_t get_u64() { return get_int(8); }
  double get_f64() {
    std::uint64_t bits = get_u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  void expect_magic(const char (&magic)[5]) {
    for (int i = 0; i < 4; ++i) {
      if (get_u8() != static_cast<std::uint8_t>(magic[i]))
        throw IoError(std::string("bad magic, expected ") + magic);
    }
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::uint64_t get_int(int n) {
    if (pos_ + static_cast<std::size_t>(n) > data_.size())
      throw IoError("truncated input");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace fl
