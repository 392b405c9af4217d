#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "protokit/protocols/multipaxos.hpp"

namespace protokit::kv {

enum class OpKind : uint8_t { Put = 1, Get = 2, Digest = 3 };

constexpr uint16_t kClientRequest = 601;
constexpr uint16_t kClientReply = 602;

struct ClientRequestMsg : ProtoMessage {
  ClientRequestMsg(uint64_t clientId, uint64_t seq, OpKind kind, std::string key,
                   std::vector<uint8_t> value)
      : ProtoMessage(kClientRequest),
        clientId(clientId),
        seq(seq),
        kind(kind),
        key(std::move(key)),
        value(std::move(value)) {}
  uint64_t clientId;
  uint64_t seq;
  OpKind kind;
  std::string key;
  std::vector<uint8_t> value;
};

struct ClientReplyMsg : ProtoMessage {
  ClientReplyMsg(uint64_t clientId, uint64_t seq, uint8_t status, std::vector<uint8_t> value)
      : ProtoMessage(kClientReply),
        clientId(clientId),
        seq(seq),
        status(status),
        value(std::move(value)) {}
  uint64_t clientId;
  uint64_t seq;
  uint8_t status;
  std::vector<uint8_t> value;
};

inline Serializer<ClientRequestMsg> clientRequestSerializer() {
  return {[](const ClientRequestMsg& m, ByteWriter& w) {
            w.putU64(m.clientId);
            w.putU64(m.seq);
            w.putU8(uint8_t(m.kind));
            w.putString(m.key);
            w.putBlob(m.value);
          },
          [](ByteReader& r) {
            uint64_t cid = r.getU64();
            uint64_t seq = r.getU64();
            OpKind kind = OpKind(r.getU8());
            std::string key = r.getString();
            return ClientRequestMsg(cid, seq, kind, std::move(key), r.getBlob());
          }};
}

inline Serializer<ClientReplyMsg> clientReplySerializer() {
  return {[](const ClientReplyMsg& m, ByteWriter& w) {
            w.putU64(m.clientId);
            w.putU64(m.seq);
            w.putU8(m.status);
            w.putBlob(m.value);
          },
          [](ByteReader& r) {
            uint64_t cid = r.getU64();
            uint64_t seq = r.getU64();
            uint8_t status = r.getU8();
            return ClientReplyMsg(cid, seq, status, r.getBlob());
          }};
}

// Replicated key/value store. Puts and gets are funneled through the
// consensus log (so a get is linearizable); a state digest request is
// answered from local state without touching the log. Each replica replies
// only to clients that contacted it directly, over the client's own inbound
// connection.
class KVStore : public Protocol {
 public:
  static constexpr ProtocolId kId = 600;

  KVStore() : Protocol("KVStore", kId) {}

  void init(const Properties& props) override {
    Properties chProps;
    chProps.set("address", props.get("address"));
    chProps.set("port", props.get("port"));
    channel_ = createChannel(props.get("smr.channel", "tcp"), chProps);

    registerMessageSerializer<ClientRequestMsg>(channel_, kClientRequest,
                                                clientRequestSerializer());
    registerMessageSerializer<ClientReplyMsg>(channel_, kClientReply, clientReplySerializer());
    registerMessageHandler<ClientRequestMsg>(
        channel_, kClientRequest,
        [this](const ClientRequestMsg& m, const Host& from, ProtocolId srcProto, ChannelId) {
          onClientRequest(m, from, srcProto);
        });
    subscribeNotification<smr::MultiPaxos::DecidedNotification>(
        smr::MultiPaxos::kDecidedNotification,
        [this](const smr::MultiPaxos::DecidedNotification& n, ProtocolId) { onDecided(n); });
  }

  // FNV-1a over the sorted (key, value) pairs; equal digests mean equal state.
  uint64_t digest() const {
    uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const void* data, size_t len) {
      const auto* p = static_cast<const uint8_t*>(data);
      for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
      }
    };
    const uint8_t sep = 0;
    for (const auto& [key, value] : store_) {
      mix(key.data(), key.size());
      mix(&sep, 1);
      mix(value.data(), value.size());
      mix(&sep, 1);
    }
    return h;
  }

  const std::map<std::string, std::vector<uint8_t>>& store() const { return store_; }
  uint64_t appliedOps() const { return applied_; }

 private:
  struct PendingClient {
    Host from;  // transport endpoint the request arrived on
    ProtocolId proto;
  };

  void onClientRequest(const ClientRequestMsg& m, const Host& from, ProtocolId srcProto) {
    if (m.kind == OpKind::Digest) {
      ByteWriter w;
      w.putU64(digest());
      sendMessage(std::make_shared<ClientReplyMsg>(m.clientId, m.seq, 0, w.take()), from,
                  channel_, Connection::In, srcProto);
      return;
    }
    pending_[{m.clientId, m.seq}] = PendingClient{from, srcProto};
    ByteWriter w;
    w.putU64(m.clientId);
    w.putU64(m.seq);
    w.putU8(uint8_t(m.kind));
    w.putString(m.key);
    w.putBlob(m.value);
    auto payload = w.take();
    const uint64_t opId = fnv1a(payload) | 1;  // 0 is reserved for no-ops
    sendRequest(std::make_shared<smr::MultiPaxos::ProposeRequest>(opId, std::move(payload)),
                smr::MultiPaxos::kId);
  }

  void onDecided(const smr::MultiPaxos::DecidedNotification& n) {
    ByteReader r(n.op.payload);
    const uint64_t clientId = r.getU64();
    const uint64_t seq = r.getU64();
    const OpKind kind = OpKind(r.getU8());
    std::string key = r.getString();
    std::vector<uint8_t> value = r.getBlob();

    ++applied_;
    std::vector<uint8_t> result;
    if (kind == OpKind::Put) {
      store_[key] = std::move(value);
    } else if (kind == OpKind::Get) {
      auto it = store_.find(key);
      if (it != store_.end()) result = it->second;
    }

    auto it = pending_.find({clientId, seq});
    if (it == pending_.end()) return;  // some other replica owns this client
    sendMessage(std::make_shared<ClientReplyMsg>(clientId, seq, 0, std::move(result)),
                it->second.from, channel_, Connection::In, it->second.proto);
    pending_.erase(it);
  }

  ChannelId channel_ = -1;
  std::map<std::string, std::vector<uint8_t>> store_;
  std::map<std::pair<uint64_t, uint64_t>, PendingClient> pending_;
  uint64_t applied_ = 0;
};

}  // namespace protokit::kv
