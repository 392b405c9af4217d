#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "protokit/bytes.hpp"
#include "protokit/errors.hpp"

namespace protokit {

// Frame layout, all fields big-endian:
//   length     u32   byte count of everything after the length field
//   sourceProto u16
//   destProto   u16
//   msgTypeId   u16
//   payload     length - 6 bytes
struct WireFrame {
  static constexpr size_t kHeaderAfterLength = 6;
  // msgTypeId reserved for failure-detector heartbeats, never visible to
  // protocols.
  static constexpr uint16_t kHeartbeatType = 0xFFFF;

  uint16_t sourceProto = 0;
  uint16_t destProto = 0;
  uint16_t msgTypeId = 0;
  std::vector<uint8_t> payload;

  std::vector<uint8_t> encode() const {
    ByteWriter w;
    w.putU32(uint32_t(kHeaderAfterLength + payload.size()));
    w.putU16(sourceProto);
    w.putU16(destProto);
    w.putU16(msgTypeId);
    w.putBytes(payload);
    return w.take();
  }

  // Decodes one complete frame (including the length field).
  static WireFrame decode(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    const uint32_t length = r.getU32();
    if (length < kHeaderAfterLength) throw DecodeError("frame length below header size");
    if (length != bytes.size() - 4) throw DecodeError("frame length mismatch");
    WireFrame f;
    f.sourceProto = r.getU16();
    f.destProto = r.getU16();
    f.msgTypeId = r.getU16();
    f.payload = r.getBytes(length - kHeaderAfterLength);
    return f;
  }

  bool operator==(const WireFrame&) const = default;
};

// Incremental frame extraction from a stream buffer. Returns a complete frame
// and consumes its bytes, or nullopt if more data is needed. Throws
// DecodeError on a malformed length field (< 6), after which the connection
// must be torn down.
class FrameAssembler {
 public:
  void feed(std::span<const uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

  std::optional<WireFrame> next() {
    if (buf_.size() < 4) return std::nullopt;
    const uint32_t length =
        (uint32_t(buf_[0]) << 24) | (uint32_t(buf_[1]) << 16) | (uint32_t(buf_[2]) << 8) | buf_[3];
    if (length < WireFrame::kHeaderAfterLength) throw DecodeError("malformed frame length");
    if (length > kMaxFrameBytes) throw DecodeError("frame exceeds size limit");
    if (buf_.size() < 4 + size_t(length)) return std::nullopt;
    WireFrame f = WireFrame::decode(std::span(buf_.data(), 4 + length));
    buf_.erase(buf_.begin(), buf_.begin() + 4 + length);
    return f;
  }

  static constexpr uint32_t kMaxFrameBytes = 64u << 20;

 private:
  std::vector<uint8_t> buf_;
};

}  // namespace protokit
