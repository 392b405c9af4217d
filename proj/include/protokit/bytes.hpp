#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "protokit/errors.hpp"
#include "protokit/host.hpp"

namespace protokit {

// Big-endian buffer writer used by message serializers and the wire codec.
class ByteWriter {
 public:
  void putU8(uint8_t v) { buf_.push_back(v); }
  void putU16(uint16_t v) {
    buf_.push_back(uint8_t(v >> 8));
    buf_.push_back(uint8_t(v));
  }
  void putU32(uint32_t v) {
    putU16(uint16_t(v >> 16));
    putU16(uint16_t(v));
  }
  void putU64(uint64_t v) {
    putU32(uint32_t(v >> 32));
    putU32(uint32_t(v));
  }
  void putI64(int64_t v) { putU64(uint64_t(v)); }
  void putDouble(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    putU64(bits);
  }
  void putBytes(std::span<const uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }
  // Length-prefixed (u32) blob.
  void putBlob(std::span<const uint8_t> bytes) {
    putU32(uint32_t(bytes.size()));
    putBytes(bytes);
  }
  void putString(const std::string& s) {
    putU32(uint32_t(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void putHost(const Host& h) {
    putU32(h.address);
    putU16(h.port);
  }

  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<uint8_t> buf_;
};

// Bounds-checked big-endian reader; throws DecodeError on underrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t getU8() {
    need(1);
    return data_[pos_++];
  }
  uint16_t getU16() {
    need(2);
    uint16_t v = uint16_t(data_[pos_] << 8) | data_[pos_ + 1];
    pos_ += 2;
    return v;
  }
  uint32_t getU32() {
    uint32_t hi = getU16();
    return (hi << 16) | getU16();
  }
  uint64_t getU64() {
    uint64_t hi = getU32();
    return (hi << 32) | getU32();
  }
  int64_t getI64() { return int64_t(getU64()); }
  double getDouble() {
    uint64_t bits = getU64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::vector<uint8_t> getBytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  std::vector<uint8_t> getBlob() { return getBytes(getU32()); }
  std::string getString() {
    size_t n = getU32();
    need(n);
    std::string out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  Host getHost() {
    uint32_t addr = getU32();
    return Host(addr, getU16());
  }

  size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(size_t n) const {
    if (data_.size() - pos_ < n) throw DecodeError("buffer underrun");
  }
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

// FNV-1a, used for flood message ids, state digests and trace digests.
inline uint64_t fnv1a(std::span<const uint8_t> data, uint64_t seed = 0xcbf29ce484222325ull) {
  uint64_t h = seed;
  for (uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a(std::span(reinterpret_cast<const uint8_t*>(s.data()), s.size()), seed);
}

}  // namespace protokit
