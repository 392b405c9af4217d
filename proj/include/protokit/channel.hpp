#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "protokit/bytes.hpp"
#include "protokit/event.hpp"
#include "protokit/properties.hpp"
#include "protokit/wire.hpp"

namespace protokit {

class Runtime;

// Which connection to a peer a send should use: one the local protocol opened
// (Out) or one accepted from the peer (In).
enum class Connection : uint8_t { Out, In };

using MessagePtr = std::shared_ptr<const ProtoMessage>;

// Typed encode/decode pair for one message type on one channel.
template <class M>
struct Serializer {
  std::function<void(const M&, ByteWriter&)> encode;
  std::function<M(ByteReader&)> decode;
};

struct ErasedSerializer {
  std::function<void(const ProtoMessage&, ByteWriter&)> encode;
  std::function<MessagePtr(ByteReader&)> decode;
};

template <class M>
ErasedSerializer erase(Serializer<M> s) {
  return ErasedSerializer{
      [enc = std::move(s.encode)](const ProtoMessage& m, ByteWriter& w) {
        enc(static_cast<const M&>(m), w);
      },
      [dec = std::move(s.decode)](ByteReader& r) -> MessagePtr {
        return std::make_shared<M>(dec(r));
      },
  };
}

// A network backend instance. Backends never run protocol code directly:
// everything protocol-visible goes back through the runtime's inboundFrame /
// emitChannelEvent, which cross into protocol queues.
class ChannelBackend {
 public:
  virtual ~ChannelBackend() = default;

  virtual void start() {}
  virtual void stop() {}
  virtual void openConnection(const Host& peer) = 0;
  virtual void closeConnection(const Host& peer) = 0;
  virtual void sendFrame(WireFrame frame, const Host& peer, Connection sel) = 0;

  void bind(Runtime* rt, ChannelId id) {
    rt_ = rt;
    id_ = id;
  }
  ChannelId channelId() const { return id_; }

 protected:
  Runtime* rt_ = nullptr;
  ChannelId id_ = -1;
};

using ChannelFactory =
    std::function<std::unique_ptr<ChannelBackend>(const std::string& name, const Properties&,
                                                  Runtime&)>;

// Global name -> factory registry. Backend headers self-register via
// registerChannelType; a Runtime-local factory (the simulator) takes
// precedence when set.
inline std::map<std::string, ChannelFactory>& channelTypeRegistry() {
  static std::map<std::string, ChannelFactory> reg;
  return reg;
}

inline bool registerChannelType(const std::string& name, ChannelFactory factory) {
  channelTypeRegistry()[name] = std::move(factory);
  return true;
}

}  // namespace protokit
