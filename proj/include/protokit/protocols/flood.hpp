#pragma once

#include <memory>
#include <set>
#include <unordered_set>
#include <vector>

#include "protokit/bytes.hpp"
#include "protokit/protocols/hyparview.hpp"
#include "protokit/runtime.hpp"

namespace protokit::p2p {

// Flood dissemination over the membership protocol's active view. Content
// hashes serve as message ids; a message is delivered and forwarded only on
// first receipt.
class Flood : public Protocol {
 public:
  static constexpr ProtocolId kId = 200;
  static constexpr uint16_t kFloodMsg = 201;
  static constexpr uint16_t kBroadcastRequest = 210;
  static constexpr uint16_t kDeliverNotification = 220;

  struct FloodMsg : ProtoMessage {
    FloodMsg(uint64_t id, Host origin, std::vector<uint8_t> payload)
        : ProtoMessage(kFloodMsg), msgId(id), origin(origin), payload(std::move(payload)) {}
    uint64_t msgId;
    Host origin;
    std::vector<uint8_t> payload;
  };

  struct BroadcastRequest : ProtoRequest {
    explicit BroadcastRequest(std::vector<uint8_t> payload)
        : ProtoRequest(kBroadcastRequest), payload(std::move(payload)) {}
    std::vector<uint8_t> payload;
  };

  struct DeliverNotification : ProtoNotification {
    DeliverNotification(uint64_t id, Host origin, std::vector<uint8_t> payload)
        : ProtoNotification(kDeliverNotification),
          msgId(id),
          origin(origin),
          payload(std::move(payload)) {}
    uint64_t msgId;
    Host origin;
    std::vector<uint8_t> payload;
  };

  static uint64_t messageId(std::span<const uint8_t> payload) { return fnv1a(payload); }

  Flood() : Protocol("Flood", kId) {}

  void init(const Properties& props) override {
    self_ = Host(props.get("address"), uint16_t(props.getInt("port")));
    Properties chProps;
    chProps.set("address", props.get("address"));
    chProps.set("port", props.get("port"));
    channel_ = createChannel(props.get("channel", "tcp"), chProps);

    registerMessageSerializer<FloodMsg>(channel_, kFloodMsg,
                                        {[](const FloodMsg& m, ByteWriter& w) {
                                           w.putU64(m.msgId);
                                           w.putHost(m.origin);
                                           w.putBlob(m.payload);
                                         },
                                         [](ByteReader& r) {
                                           uint64_t id = r.getU64();
                                           Host origin = r.getHost();
                                           return FloodMsg(id, origin, r.getBlob());
                                         }});
    registerMessageHandler<FloodMsg>(
        channel_, kFloodMsg,
        [this](const FloodMsg& m, const Host& from, ProtocolId, ChannelId) {
          onFloodMessage(m, from);
        });
    registerRequestHandler<BroadcastRequest>(
        kBroadcastRequest,
        [this](const BroadcastRequest& req, ProtocolId) { broadcast(req.payload); });
    subscribeNotification<HyParView::NeighborUp>(
        HyParView::kNeighborUp,
        [this](const HyParView::NeighborUp& n, ProtocolId) { neighbors_.insert(n.peer); });
    subscribeNotification<HyParView::NeighborDown>(
        HyParView::kNeighborDown,
        [this](const HyParView::NeighborDown& n, ProtocolId) { neighbors_.erase(n.peer); });
  }

  const std::set<Host>& neighbors() const { return neighbors_; }

 private:
  void broadcast(const std::vector<uint8_t>& payload) {
    const uint64_t id = messageId(payload);
    if (delivered_.count(id)) return;  // same content, same id: duplicate
    deliverLocal(id, self_, payload);
    auto msg = std::make_shared<FloodMsg>(id, self_, payload);
    for (const Host& n : neighbors_) sendMessage(msg, n, channel_);
  }

  void onFloodMessage(const FloodMsg& m, const Host& from) {
    if (delivered_.count(m.msgId)) return;
    deliverLocal(m.msgId, m.origin, m.payload);
    auto msg = std::make_shared<FloodMsg>(m);
    for (const Host& n : neighbors_) {
      if (n != from) sendMessage(msg, n, channel_);
    }
  }

  void deliverLocal(uint64_t id, const Host& origin, const std::vector<uint8_t>& payload) {
    delivered_.insert(id);
    triggerNotification(std::make_shared<DeliverNotification>(id, origin, payload));
  }

  Host self_;
  ChannelId channel_ = -1;
  std::set<Host> neighbors_;
  std::unordered_set<uint64_t> delivered_;
};

}  // namespace protokit::p2p
