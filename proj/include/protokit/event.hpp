#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "protokit/host.hpp"

namespace protokit {

using ProtocolId = uint16_t;
using ChannelId = int;
using TimerId = uint64_t;

enum class EventKind : uint8_t {
  Init,
  Timer,
  Request,
  Reply,
  Notification,
  NetworkMessage,
  ChannelEvent,
};

inline const char* toString(EventKind k) {
  switch (k) {
    case EventKind::Init: return "init";
    case EventKind::Timer: return "timer";
    case EventKind::Request: return "request";
    case EventKind::Reply: return "reply";
    case EventKind::Notification: return "notification";
    case EventKind::NetworkMessage: return "message";
    case EventKind::ChannelEvent: return "channel";
  }
  return "?";
}

// Base classes for developer-defined event bodies. Each concrete type carries
// a process-unique type id within its kind.
struct ProtoTimer {
  explicit ProtoTimer(uint16_t typeId) : typeId(typeId) {}
  virtual ~ProtoTimer() = default;
  const uint16_t typeId;
};

struct ProtoRequest {
  explicit ProtoRequest(uint16_t typeId) : typeId(typeId) {}
  virtual ~ProtoRequest() = default;
  const uint16_t typeId;
};

struct ProtoReply {
  explicit ProtoReply(uint16_t typeId) : typeId(typeId) {}
  virtual ~ProtoReply() = default;
  const uint16_t typeId;
};

struct ProtoNotification {
  explicit ProtoNotification(uint16_t typeId) : typeId(typeId) {}
  virtual ~ProtoNotification() = default;
  const uint16_t typeId;
};

struct ProtoMessage {
  explicit ProtoMessage(uint16_t typeId) : typeId(typeId) {}
  virtual ~ProtoMessage() = default;
  const uint16_t typeId;
};

enum class ChannelEventKind : uint16_t {
  OutConnectionUp = 1,
  OutConnectionDown = 2,
  OutConnectionFailed = 3,
  InConnectionUp = 4,
  InConnectionDown = 5,
  PeerSuspected = 6,  // emitted only by the accrual channel
};

inline const char* toString(ChannelEventKind k) {
  switch (k) {
    case ChannelEventKind::OutConnectionUp: return "OutConnectionUp";
    case ChannelEventKind::OutConnectionDown: return "OutConnectionDown";
    case ChannelEventKind::OutConnectionFailed: return "OutConnectionFailed";
    case ChannelEventKind::InConnectionUp: return "InConnectionUp";
    case ChannelEventKind::InConnectionDown: return "InConnectionDown";
    case ChannelEventKind::PeerSuspected: return "PeerSuspected";
  }
  return "?";
}

struct ChannelEvent {
  ChannelEventKind kind;
  Host peer;
  std::string cause;
  double phi = 0.0;  // set for PeerSuspected
};

// The unit routed through protocol queues. `payload` points at the concrete
// body for the (kind, typeId) pair; handlers registered by protocols recover
// the static type.
struct Event {
  EventKind kind = EventKind::Init;
  uint16_t typeId = 0;
  std::shared_ptr<void> payload;
  ProtocolId source = 0;       // ipc sender
  Host from{};                 // network sender endpoint
  ProtocolId sourceProto = 0;  // network sender protocol
  ChannelId channel = -1;
  TimerId timerId = 0;
};

}  // namespace protokit
