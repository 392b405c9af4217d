#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>

#include "protokit/channel.hpp"
#include "protokit/errors.hpp"
#include "protokit/event.hpp"
#include "protokit/properties.hpp"

namespace protokit {

class Runtime;

// Base class for protocols. A protocol is a state machine: it registers one
// callback per event type it consumes, and the runtime invokes those
// callbacks serially on the protocol's own execution context. Protocol state
// therefore needs no locking as long as it is only touched inside handlers.
//
// init() runs before any other event of the protocol and is the place to
// register handlers, create channels and set initial timers.
class Protocol {
 public:
  Protocol(std::string name, ProtocolId id) : name_(std::move(name)), id_(id) {}
  virtual ~Protocol() = default;

  Protocol(const Protocol&) = delete;
  Protocol& operator=(const Protocol&) = delete;

  const std::string& name() const { return name_; }
  ProtocolId id() const { return id_; }

  virtual void init(const Properties& props) = 0;

 protected:
  // ---- handler registration ----------------------------------------------

  template <class T>
  void registerTimerHandler(uint16_t typeId, std::function<void(T&, TimerId)> h) {
    addHandler(timerHandlers_, typeId,
               [h = std::move(h)](Event& ev) {
                 h(static_cast<T&>(*std::static_pointer_cast<ProtoTimer>(ev.payload)),
                   ev.timerId);
               });
  }

  template <class T>
  void registerRequestHandler(uint16_t typeId, std::function<void(const T&, ProtocolId)> h) {
    addHandler(requestHandlers_, typeId, [h = std::move(h)](Event& ev) {
      h(*std::static_pointer_cast<const T>(ev.payload), ev.source);
    });
  }

  template <class T>
  void registerReplyHandler(uint16_t typeId, std::function<void(const T&, ProtocolId)> h) {
    addHandler(replyHandlers_, typeId, [h = std::move(h)](Event& ev) {
      h(*std::static_pointer_cast<const T>(ev.payload), ev.source);
    });
  }

  // Registers the callback and subscribes in one step, mirroring how
  // notification interest is declared in init().
  template <class T>
  void subscribeNotification(uint16_t typeId, std::function<void(const T&, ProtocolId)> h);
  void unsubscribeNotification(uint16_t typeId);

  template <class M>
  void registerMessageHandler(ChannelId channel, uint16_t typeId,
                              std::function<void(const M&, const Host&, ProtocolId, ChannelId)> h) {
    addHandler(messageHandlers_, std::make_pair(channel, typeId),
               [h = std::move(h)](Event& ev) {
                 h(*std::static_pointer_cast<const M>(ev.payload), ev.from, ev.sourceProto,
                   ev.channel);
               });
  }

  void registerChannelEventHandler(ChannelId channel, ChannelEventKind kind,
                                   std::function<void(const ChannelEvent&, ChannelId)> h) {
    addHandler(channelEventHandlers_, std::make_pair(channel, uint16_t(kind)),
               [h = std::move(h)](Event& ev) {
                 h(*std::static_pointer_cast<const ChannelEvent>(ev.payload), ev.channel);
               });
  }

  // ---- actions (bodies live in runtime.hpp) ------------------------------

  TimerId setupTimer(std::shared_ptr<ProtoTimer> timer, int64_t delayMs);
  TimerId setupPeriodicTimer(std::shared_ptr<ProtoTimer> timer, int64_t firstDelayMs,
                             int64_t periodMs);
  bool cancelTimer(TimerId id);

  void sendRequest(std::shared_ptr<const ProtoRequest> req, ProtocolId dest);
  void sendReply(std::shared_ptr<const ProtoReply> rep, ProtocolId dest);
  int triggerNotification(std::shared_ptr<const ProtoNotification> n);

  ChannelId createChannel(const std::string& channelName, const Properties& props);
  template <class M>
  void registerMessageSerializer(ChannelId channel, uint16_t typeId, Serializer<M> s);
  void openConnection(const Host& peer, ChannelId channel);
  void closeConnection(const Host& peer, ChannelId channel);
  void sendMessage(MessagePtr msg, const Host& peer, ChannelId channel,
                   Connection sel = Connection::Out);
  void sendMessage(MessagePtr msg, const Host& peer, ChannelId channel, Connection sel,
                   ProtocolId destProto);

  int64_t nowMs() const;
  Runtime& runtime() { return *runtime_; }

  bool hasTimerHandler(uint16_t typeId) const { return timerHandlers_.count(typeId) != 0; }
  bool hasNotificationHandler(uint16_t typeId) const {
    return notificationHandlers_.count(typeId) != 0;
  }

 private:
  friend class Runtime;

  using ErasedHandler = std::function<void(Event&)>;

  template <class Key>
  void addHandler(std::map<Key, ErasedHandler>& map, const Key& key, ErasedHandler h) {
    if (!map.emplace(key, std::move(h)).second)
      throw DuplicateHandler(name_ + ": handler already registered for this event type");
  }

  const ErasedHandler* findHandler(const Event& ev) const {
    switch (ev.kind) {
      case EventKind::Timer: return lookup(timerHandlers_, ev.typeId);
      case EventKind::Request: return lookup(requestHandlers_, ev.typeId);
      case EventKind::Reply: return lookup(replyHandlers_, ev.typeId);
      case EventKind::Notification: return lookup(notificationHandlers_, ev.typeId);
      case EventKind::NetworkMessage:
        return lookup(messageHandlers_, std::make_pair(ev.channel, ev.typeId));
      case EventKind::ChannelEvent:
        return lookup(channelEventHandlers_, std::make_pair(ev.channel, ev.typeId));
      case EventKind::Init: return nullptr;
    }
    return nullptr;
  }

  template <class Key>
  static const ErasedHandler* lookup(const std::map<Key, ErasedHandler>& map, const Key& key) {
    auto it = map.find(key);
    return it == map.end() ? nullptr : &it->second;
  }

  std::string name_;
  ProtocolId id_;
  Runtime* runtime_ = nullptr;
  std::set<uint16_t> pendingSubs_;  // subscriptions made before registration

  std::map<uint16_t, ErasedHandler> timerHandlers_;
  std::map<uint16_t, ErasedHandler> requestHandlers_;
  std::map<uint16_t, ErasedHandler> replyHandlers_;
  std::map<uint16_t, ErasedHandler> notificationHandlers_;
  std::map<std::pair<ChannelId, uint16_t>, ErasedHandler> messageHandlers_;
  std::map<std::pair<ChannelId, uint16_t>, ErasedHandler> channelEventHandlers_;
};

}  // namespace protokit
