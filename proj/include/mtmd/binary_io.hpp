/* Copyright 2026 The MTMD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "mtmd/errors.hpp"

namespace mtmd::bin {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// Little-endian byte sink.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw FormatError("string too long for u16 length: " + std::string(s.substr(0, 32)));
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s);
  }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::string& data() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!os) throw IoError("write failed: " + path);
  }

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

// Little-endian byte source; every short read is a FormatError naming the offset.
class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}

  static Reader load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return Reader(std::string(std::istreambuf_iterator<char>(is), {}));
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string_view bytes(std::size_t n) { return take(n); }
  std::string str16() { return std::string(take(u16())); }
  std::string str32() { return std::string(take(u32())); }

 private:
  std::string_view take(std::size_t n) {
    if (buf_.size() - pos_ < n) {
      throw FormatError("truncated file at byte offset " + std::to_string(pos_) + ": needed " +
                        std::to_string(n) + " bytes, " + std::to_string(buf_.size() - pos_) +
                        " left");
    }
    std::string_view v(buf_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  template <typename T>
  T get() {
    const auto s = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(s[i])) << (8 * i));
    return v;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace mtmd::bin
