// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary container for named float64 arrays.
//
//   magic      8 bytes  "FCARAC01"
//   count      u32      number of entries
//   per entry:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64 x rank
//     payload  f64 x prod(dims)
//
// All integers and floats are little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcarac/array.hpp"

namespace fcarac {

inline constexpr char kContainerMagic[8] = {'F', 'C', 'A', 'R', 'A', 'C', '0', '1'};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Array value;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw FormatError("container truncated at byte " + std::to_string(pos_));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string get_bytes(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("container truncated at byte " + std::to_string(pos_));
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_container(const std::vector<NamedArray>& entries) {
  std::string out(kContainerMagic, sizeof(kContainerMagic));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : e.value.data()) detail::put_le<double>(out, v);
  }
  return out;
}

inline std::vector<NamedArray> decode_container(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.get_bytes(sizeof(kContainerMagic)) != std::string(kContainerMagic, sizeof(kContainerMagic))) {
    throw FormatError("bad container magic");
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedArray> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    e.name = r.get_bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("entry '" + e.name + "': implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const auto n = shape_size(shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("entry '" + e.name + "': implausible size");
    std::vector<double> data(n);
    for (auto& v : data) v = r.get<double>();
    e.value = Array(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last container entry");
  return entries;
}

inline void write_container(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto bytes = encode_container(entries);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<NamedArray> read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace fcarac
