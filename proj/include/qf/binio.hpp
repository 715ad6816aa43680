#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "qf/error.hpp"

namespace qf {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// Thrown when a binary file ends before its declared payload.
class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failure on " + path_.string());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    bytes(&v, sizeof(v));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> v) {
    bytes(v.data(), v.size_bytes());
  }

  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void close() {
    out_.flush();
    if (!out_) throw IoError("flush failure on " + path_.string());
    out_.close();
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
  }

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw TruncatedError(path_.string() + ": truncated file");
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T v;
    bytes(&v, sizeof(v));
    return v;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_array(std::span<T> v) {
    bytes(v.data(), v.size_bytes());
  }

  std::string get_string(std::uint32_t max_len = 1u << 30) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw DataError(path_.string() + ": string length " + std::to_string(n) + " out of range");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  // Reads and compares a fixed magic tag.
  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (static_cast<std::size_t>(in_.gcount()) != magic.size() || got != magic)
      throw DataError(path_.string() + ": bad magic or version (expected " + std::string(magic) + ")");
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace qf
