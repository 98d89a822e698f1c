#pragma once

// .gnpc checkpoint format (all integers little-endian):
//
//   "GNPC"                      4 bytes magic
//   u32 version = 1
//   u32 parameter count
//   per parameter, in lexicographic name order:
//     u16 name length, UTF-8 name bytes
//     u8  ndim, then ndim x u32 dims
//     prod(dims) x f64 (IEEE-754 binary64, little-endian)
//   u32 CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320) of every byte above

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnp/nn.hpp"

namespace gnp {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("checkpoint: truncated file");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Params& params) {
  std::vector<std::uint8_t> out{'G', 'N', 'P', 'C'};
  detail::put_le(out, 1, 4);
  detail::put_le(out, params.size(), 4);
  for (const auto& [name, t] : params) {
    if (name.size() > 0xFFFF) throw FormatError("checkpoint: parameter name too long");
    if (t.ndim() > 0xFF) throw FormatError("checkpoint: too many dimensions");
    detail::put_le(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    detail::put_le(out, t.ndim(), 1);
    for (auto d : t.shape()) {
      if (d > 0xFFFFFFFFu) throw FormatError("checkpoint: dimension too large");
      detail::put_le(out, d, 4);
    }
    for (double v : t.data()) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  detail::put_le(out, crc32(out.data(), out.size()), 4);
  return out;
}

inline Params decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw FormatError("checkpoint: file too short");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (crc32(bytes.data(), body) != stored) throw FormatError("checkpoint: CRC mismatch");

  detail::Reader r(bytes);
  if (r.str(4) != "GNPC") throw FormatError("checkpoint: bad magic");
  const auto version = r.le(4);
  if (version != 1) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.le(4);
  Params params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.str(r.le(2));
    const auto ndim = r.le(1);
    Shape shape;
    for (std::uint64_t d = 0; d < ndim; ++d) shape.push_back(r.le(4));
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(r.le(8));
    if (!params.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw FormatError("checkpoint: duplicate parameter '" + name + "'");
    }
  }
  if (r.pos() != body) throw FormatError("checkpoint: trailing bytes before CRC");
  return params;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const std::string& path, const Params& params) {
  write_bytes(path, encode_checkpoint(params));
}

inline Params load_checkpoint(const std::string& path) { return decode_checkpoint(read_bytes(path)); }

}  // namespace gnp
