#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "clvq/error.hpp"

namespace clvq {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

namespace detail {

template <typename T>
T byteswap_if_needed(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

}  // namespace detail

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    v = detail::byteswap_if_needed(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  template <typename T>
  void put_span(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const char*>(values.data());
      buf_.insert(buf_.end(), p, p + values.size_bytes());
    } else {
      for (T v : values) put(v);
    }
  }

  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  std::size_t size() const { return buf_.size(); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Bounds-checked little-endian reader over a byte span.
class ByteReader {
 public:
  ByteReader(std::span<const char> data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    require(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return detail::byteswap_if_needed(v);
  }

  template <typename T>
  void get_span(std::span<T> out) {
    require(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
    if constexpr (std::endian::native != std::endian::little) {
      for (auto& v : out) v = detail::byteswap_if_needed(v);
    }
  }

  std::string get_bytes(std::size_t n) {
    require(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void seek(std::size_t pos) {
    if (pos > data_.size()) throw IoError(origin_ + ": offset beyond end of file");
    pos_ = pos;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return data_.size(); }

 private:
  void require(std::size_t n) const {
    if (pos_ + n > data_.size()) throw IoError(origin_ + ": truncated (need " +
                                               std::to_string(n) + " bytes at offset " +
                                               std::to_string(pos_) + ")");
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::vector<char> read_file(const std::string& path);
/// Writes via a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::string& path, std::span<const char> bytes);

}  // namespace clvq
