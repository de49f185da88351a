// Copyright 2026 The nice Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian primitives shared by the on-disk formats.

#ifndef NICE_BINARY_IO_HPP
#define NICE_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nice/error.hpp"

namespace nicekit::io {

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void magic(const char (&tag)[5]) { bytes(tag, 4); }
  template <typename T>
  void scalar(T value) {
    value = byteswap_if_big(value);
    bytes(&value, sizeof(T));
  }
  void floats(const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) scalar(data[i]);
    }
  }
  void blob(const std::string& text) {
    scalar<std::uint64_t>(text.size());
    bytes(text.data(), text.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw Error("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Reads a whole file and hands out bounds-checked slices; running past the
// end is reported as corruption.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    buffer_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  const std::string& path() const { return path_; }
  std::size_t remaining() const { return buffer_.size() - pos_; }

  void expect_magic(const char (&tag)[5]) {
    if (remaining() < 4 || std::memcmp(buffer_.data() + pos_, tag, 4) != 0) {
      throw FormatError(path_ + ": bad magic, expected \"" + std::string(tag, 4) + "\"");
    }
    pos_ += 4;
  }
  template <typename T>
  T scalar() {
    T value;
    take(&value, sizeof(T));
    return byteswap_if_big(value);
  }
  void floats(float* out, std::uint64_t n) {
    if (n > remaining() / sizeof(float)) {
      throw CorruptionError(path_ + ": truncated payload, need " + std::to_string(n) +
                            " floats, " + std::to_string(remaining() / sizeof(float)) +
                            " available");
    }
    take(out, n * sizeof(float));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::uint64_t i = 0; i < n; ++i) out[i] = byteswap_if_big(out[i]);
    }
  }
  std::string blob() {
    const auto n = scalar<std::uint64_t>();
    if (n > remaining()) throw CorruptionError(path_ + ": truncated metadata blob");
    std::string text(buffer_.data() + pos_, n);
    pos_ += n;
    return text;
  }
  std::string text(std::size_t n) {
    if (n > remaining()) throw CorruptionError(path_ + ": truncated string");
    std::string s(buffer_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void take(void* out, std::size_t n) {
    if (n > remaining()) throw CorruptionError(path_ + ": unexpected end of file");
    std::memcpy(out, buffer_.data() + pos_, n);
    pos_ += n;
  }

  std::string path_;
  std::vector<char> buffer_;
  std::size_t pos_ = 0;
};

// Product of dims, or throws CorruptionError on overflow / absurd size.
inline std::uint64_t checked_product(std::initializer_list<std::uint64_t> dims,
                                     const std::string& where) {
  std::uint64_t total = 1;
  for (auto d : dims) {
    if (d != 0 && total > (std::uint64_t{1} << 62) / d) {
      throw CorruptionError(where + ": dimension overflow");
    }
    total *= d;
  }
  return total;
}

}  // namespace nicekit::io

#endif  // NICE_BINARY_IO_HPP
