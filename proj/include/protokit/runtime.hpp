#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "protokit/channel.hpp"
#include "protokit/errors.hpp"
#include "protokit/event.hpp"
#include "protokit/log.hpp"
#include "protokit/properties.hpp"
#include "protokit/protocol.hpp"
#include "protokit/scheduler.hpp"
#include "protokit/timer_service.hpp"
#include "protokit/wire.hpp"

namespace protokit {

// The core. Hosts registered protocols, mediates every event between them,
// owns the timer service and the channel registry.
//
// Two execution modes share the same serial/FIFO contract:
//  - Threaded (default): each protocol gets a dedicated thread draining its
//    queue; channels and timers run on their own contexts and cross over via
//    deliver(), which is safe from any thread.
//  - Deterministic: constructed with an external Scheduler; all protocol
//    loops are multiplexed onto scheduler tasks under a virtual clock. Used
//    by the network simulator.
class Runtime {
 public:
  Runtime() : timers_() { wireTimers(); }
  explicit Runtime(Scheduler& sched) : sched_(&sched), timers_(&sched) { wireTimers(); }

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  ~Runtime() { stop(); }

  // ---- lifecycle ----------------------------------------------------------

  void registerProtocol(Protocol* proto) {
    if (started_) throw RuntimeAlreadyStarted("cannot register protocols after start()");
    if (entries_.count(proto->id()))
      throw DuplicateProtocolId("protocol id " + std::to_string(proto->id()) +
                                " already registered");
    auto entry = std::make_unique<Entry>();
    entry->proto = proto;
    proto->runtime_ = this;
    for (uint16_t typeId : proto->pendingSubs_) subscribe(typeId, proto->id());
    proto->pendingSubs_.clear();
    entries_.emplace(proto->id(), std::move(entry));
  }

  // Runs every protocol's Init before any other event of that protocol.
  void start(const Properties& props = {}) {
    if (started_) throw RuntimeAlreadyStarted("start() called twice");
    if (entries_.empty()) throw NoProtocolsRegistered("no protocols registered");
    props_ = props;
    started_ = true;
    timers_.start();
    if (sched_) {
      for (auto& [id, entry] : entries_) {
        Event init;
        init.kind = EventKind::Init;
        dispatch(*entry, init);
        if (!entry->queue.empty()) scheduleDrain(*entry);
      }
    } else {
      for (auto& [id, entry] : entries_) {
        entry->thread = std::thread([this, e = entry.get()] { threadMain(*e); });
      }
    }
  }

  void stop() {
    if (!started_ || stopped_) {
      stopped_ = true;
      return;
    }
    stopped_ = true;
    {
      std::lock_guard lock(channelsMu_);
      for (auto& [id, rec] : channels_) rec->backend->stop();
    }
    timers_.stop();
    if (!sched_) {
      stopping_ = true;
      for (auto& [id, entry] : entries_) {
        {
          std::lock_guard lock(entry->mu);
        }
        entry->cv.notify_all();
      }
      for (auto& [id, entry] : entries_) {
        if (entry->thread.joinable()) entry->thread.join();
      }
    }
  }

  bool started() const { return started_; }

  // Deterministic mode: node crashed. The runtime drops everything from now
  // on, including events already queued.
  void halt() { halted_ = true; }
  bool halted() const { return halted_; }

  // ---- event delivery -----------------------------------------------------

  void deliver(ProtocolId target, Event ev) {
    Entry* e = find(target);
    if (!e) throw UnknownProtocol("protocol " + std::to_string(target) + " not registered");
    enqueue(*e, std::move(ev));
  }

  // Network-originated events: unknown targets are dropped, not an error.
  bool deliverFromNetwork(ProtocolId target, Event ev) {
    Entry* e = find(target);
    if (!e) {
      ++droppedUnknownProto_;
      return false;
    }
    enqueue(*e, std::move(ev));
    return true;
  }

  // ---- timers -------------------------------------------------------------

  TimerService& timers() { return timers_; }
  int64_t nowMs() const { return timers_.nowMs(); }
  Scheduler* scheduler() { return sched_; }

  // ---- intra-process bus --------------------------------------------------

  void sendRequest(ProtocolId from, std::shared_ptr<const ProtoRequest> req, ProtocolId dest) {
    Event ev;
    ev.kind = EventKind::Request;
    ev.typeId = req->typeId;
    ev.source = from;
    ev.payload = std::const_pointer_cast<ProtoRequest>(std::move(req));
    deliver(dest, std::move(ev));
  }

  void sendReply(ProtocolId from, std::shared_ptr<const ProtoReply> rep, ProtocolId dest) {
    Event ev;
    ev.kind = EventKind::Reply;
    ev.typeId = rep->typeId;
    ev.source = from;
    ev.payload = std::const_pointer_cast<ProtoReply>(std::move(rep));
    deliver(dest, std::move(ev));
  }

  // Fans out to the subscribers present at trigger time; returns their count.
  int triggerNotification(ProtocolId from, std::shared_ptr<const ProtoNotification> n) {
    std::vector<ProtocolId> targets;
    {
      std::lock_guard lock(subsMu_);
      auto it = subscribers_.find(n->typeId);
      if (it != subscribers_.end()) targets.assign(it->second.begin(), it->second.end());
    }
    for (ProtocolId dest : targets) {
      Event ev;
      ev.kind = EventKind::Notification;
      ev.typeId = n->typeId;
      ev.source = from;
      ev.payload = std::const_pointer_cast<ProtoNotification>(n);
      deliverFromNetwork(dest, std::move(ev));
    }
    return int(targets.size());
  }

  void subscribe(uint16_t typeId, ProtocolId owner) {
    std::lock_guard lock(subsMu_);
    subscribers_[typeId].insert(owner);
  }

  void unsubscribe(uint16_t typeId, ProtocolId owner) {
    std::lock_guard lock(subsMu_);
    auto it = subscribers_.find(typeId);
    if (it != subscribers_.end()) it->second.erase(owner);
  }

  // ---- channels -----------------------------------------------------------

  // Channels with the same (name, address, port) are shared: the second
  // createChannel attaches the caller to the existing backend.
  ChannelId createChannel(const std::string& name, const Properties& props, ProtocolId owner) {
    std::unique_lock lock(channelsMu_);
    const std::string key =
        name + "|" + props.get("address", "") + ":" + props.get("port", "");
    for (auto& [id, rec] : channels_) {
      if (rec->key == key) {
        attachLocked(*rec, owner);
        return id;
      }
    }
    std::unique_ptr<ChannelBackend> backend;
    if (channelFactory_) backend = channelFactory_(name, props, *this);
    if (!backend) {
      auto it = channelTypeRegistry().find(name);
      if (it == channelTypeRegistry().end())
        throw UnknownChannelName("no channel backend named '" + name + "'");
      backend = it->second(name, props, *this);
    }
    const ChannelId id = nextChannelId_++;
    auto rec = std::make_unique<ChannelRec>();
    rec->key = key;
    rec->backend = std::move(backend);
    rec->backend->bind(this, id);
    attachLocked(*rec, owner);
    ChannelBackend* raw = rec->backend.get();
    channels_.emplace(id, std::move(rec));
    lock.unlock();
    raw->start();
    return id;
  }

  void setChannelFactory(ChannelFactory f) { channelFactory_ = std::move(f); }

  void registerSerializer(ChannelId channel, uint16_t msgTypeId, ErasedSerializer s) {
    std::lock_guard lock(channelsMu_);
    ChannelRec& rec = channelRecLocked(channel);
    if (!rec.serializers.emplace(msgTypeId, std::move(s)).second)
      throw DuplicateSerializer("serializer already registered for message type " +
                                std::to_string(msgTypeId));
  }

  void openConnection(const Host& peer, ChannelId channel) {
    backendOf(channel)->openConnection(peer);
  }

  void closeConnection(const Host& peer, ChannelId channel) {
    backendOf(channel)->closeConnection(peer);
  }

  void sendMessage(ProtocolId source, const MessagePtr& msg, const Host& peer, ChannelId channel,
                   Connection sel, ProtocolId destProto) {
    WireFrame frame;
    frame.sourceProto = source;
    frame.destProto = destProto;
    frame.msgTypeId = msg->typeId;
    ChannelBackend* backend;
    {
      std::lock_guard lock(channelsMu_);
      ChannelRec& rec = channelRecLocked(channel);
      auto it = rec.serializers.find(msg->typeId);
      if (it == rec.serializers.end())
        throw NoSerializer("no serializer for message type " + std::to_string(msg->typeId));
      ByteWriter w;
      it->second.encode(*msg, w);
      frame.payload = w.take();
      backend = rec.backend.get();
    }
    backend->sendFrame(std::move(frame), peer, sel);
  }

  // ---- backend upcalls ----------------------------------------------------

  // A decoded-on-arrival frame from a channel backend. Runs on the backend's
  // context; everything protocol-visible crosses via the target queue.
  void inboundFrame(ChannelId channel, const WireFrame& frame, const Host& from) {
    MessagePtr msg;
    {
      std::lock_guard lock(channelsMu_);
      auto cit = channels_.find(channel);
      if (cit == channels_.end()) return;
      ChannelRec& rec = *cit->second;
      auto it = rec.serializers.find(frame.msgTypeId);
      if (it == rec.serializers.end()) {
        ++droppedNoSerializer_;
        log::warn("channel %d: dropping frame with unregistered msg type %u", channel,
                  unsigned(frame.msgTypeId));
        return;
      }
      try {
        ByteReader r(frame.payload);
        msg = it->second.decode(r);
      } catch (const std::exception& ex) {
        ++droppedDecodeError_;
        log::warn("channel %d: frame decode failed: %s", channel, ex.what());
        return;
      }
    }
    Event ev;
    ev.kind = EventKind::NetworkMessage;
    ev.typeId = frame.msgTypeId;
    ev.payload = std::const_pointer_cast<ProtoMessage>(msg);
    ev.from = from;
    ev.sourceProto = frame.sourceProto;
    ev.channel = channel;
    deliverFromNetwork(frame.destProto, std::move(ev));
  }

  // Fans a connection lifecycle event out to every protocol attached to the
  // channel.
  void emitChannelEvent(ChannelId channel, const ChannelEvent& cev) {
    std::vector<ProtocolId> attached;
    {
      std::lock_guard lock(channelsMu_);
      auto it = channels_.find(channel);
      if (it == channels_.end()) return;
      attached = it->second->attached;
    }
    auto payload = std::make_shared<ChannelEvent>(cev);
    for (ProtocolId p : attached) {
      Event ev;
      ev.kind = EventKind::ChannelEvent;
      ev.typeId = uint16_t(cev.kind);
      ev.payload = payload;
      ev.from = cev.peer;
      ev.channel = channel;
      deliverFromNetwork(p, std::move(ev));
    }
  }

  // ---- diagnostics --------------------------------------------------------

  uint64_t droppedUnknownProto() const { return droppedUnknownProto_; }
  uint64_t droppedNoHandler() const { return droppedNoHandler_; }
  uint64_t droppedNoSerializer() const { return droppedNoSerializer_; }
  uint64_t droppedDecodeError() const { return droppedDecodeError_; }
  uint64_t handlerExceptions() const { return handlerExceptions_; }
  uint64_t reentryViolations() const { return reentryViolations_; }
  uint64_t processedEvents() const { return processedEvents_; }

  const Properties& props() const { return props_; }

 private:
  struct Entry {
    Protocol* proto = nullptr;
    std::deque<Event> queue;
    std::mutex mu;
    std::condition_variable cv;
    std::thread thread;
    std::atomic<bool> inHandler{false};
    bool drainScheduled = false;  // deterministic mode
    bool initDone = false;
  };

  struct ChannelRec {
    std::string key;
    std::unique_ptr<ChannelBackend> backend;
    std::vector<ProtocolId> attached;
    std::map<uint16_t, ErasedSerializer> serializers;
  };

  void wireTimers() {
    timers_.setDeliver([this](ProtocolId owner, Event ev) {
      Entry* e = find(owner);
      if (e) enqueue(*e, std::move(ev));
    });
  }

  Entry* find(ProtocolId id) {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : it->second.get();
  }

  void attachLocked(ChannelRec& rec, ProtocolId owner) {
    for (ProtocolId p : rec.attached)
      if (p == owner) return;
    rec.attached.push_back(owner);
  }

  ChannelRec& channelRecLocked(ChannelId id) {
    auto it = channels_.find(id);
    if (it == channels_.end())
      throw UnknownChannel("channel " + std::to_string(id) + " does not exist");
    return *it->second;
  }

  ChannelBackend* backendOf(ChannelId id) {
    std::lock_guard lock(channelsMu_);
    return channelRecLocked(id).backend.get();
  }

  void enqueue(Entry& e, Event ev) {
    if (halted_) return;
    if (sched_) {
      e.queue.push_back(std::move(ev));
      if (!e.drainScheduled && started_) scheduleDrain(e);
    } else {
      {
        std::lock_guard lock(e.mu);
        e.queue.push_back(std::move(ev));
      }
      e.cv.notify_one();
    }
  }

  void scheduleDrain(Entry& e) {
    e.drainScheduled = true;
    sched_->schedule(0, [this, &e] { drain(e); });
  }

  void drain(Entry& e) {
    if (halted_ || !started_) {
      e.drainScheduled = false;
      return;
    }
    while (!e.queue.empty()) {
      Event ev = std::move(e.queue.front());
      e.queue.pop_front();
      dispatch(e, ev);
      if (halted_) break;
    }
    e.drainScheduled = false;
  }

  void threadMain(Entry& e) {
    Event init;
    init.kind = EventKind::Init;
    dispatch(e, init);
    while (true) {
      std::unique_lock lock(e.mu);
      e.cv.wait(lock, [&] { return stopping_ || !e.queue.empty(); });
      if (e.queue.empty()) {
        if (stopping_) return;
        continue;
      }
      Event ev = std::move(e.queue.front());
      e.queue.pop_front();
      lock.unlock();
      dispatch(e, ev);
    }
  }

  // Runs one handler on the protocol's context. Handler exceptions are
  // contained: a throwing handler must not take down co-located protocols or
  // stop the protocol's own loop.
  void dispatch(Entry& e, Event& ev) {
    if (e.inHandler.exchange(true)) ++reentryViolations_;
    ++processedEvents_;
    try {
      if (ev.kind == EventKind::Init) {
        e.proto->init(props_);
        e.initDone = true;
      } else if (ev.kind == EventKind::Timer) {
        auto payload = timers_.consumeFire(ev.timerId);
        if (payload) {
          ev.payload = std::move(payload);
          invoke(e, ev);
        }
      } else {
        invoke(e, ev);
      }
    } catch (const std::exception& ex) {
      ++handlerExceptions_;
      log::error("%s: handler for %s/%u threw: %s", e.proto->name().c_str(), toString(ev.kind),
                 unsigned(ev.typeId), ex.what());
    } catch (...) {
      ++handlerExceptions_;
      log::error("%s: handler for %s/%u threw", e.proto->name().c_str(), toString(ev.kind),
                 unsigned(ev.typeId));
    }
    e.inHandler.store(false);
  }

  void invoke(Entry& e, Event& ev) {
    const auto* handler = e.proto->findHandler(ev);
    if (handler) {
      (*handler)(ev);
    } else if (ev.kind != EventKind::ChannelEvent) {
      // Channel events are opt-in per kind; everything else unhandled is a
      // contract violation worth a warning.
      ++droppedNoHandler_;
      log::warn("%s: no handler for %s/%u, event dropped", e.proto->name().c_str(),
                toString(ev.kind), unsigned(ev.typeId));
    }
  }

  Scheduler* sched_ = nullptr;
  TimerService timers_;
  Properties props_;
  std::map<ProtocolId, std::unique_ptr<Entry>> entries_;

  std::mutex subsMu_;
  std::map<uint16_t, std::set<ProtocolId>> subscribers_;

  std::mutex channelsMu_;
  std::map<ChannelId, std::unique_ptr<ChannelRec>> channels_;
  ChannelFactory channelFactory_;
  ChannelId nextChannelId_ = 1;

  std::atomic<bool> started_{false};
  std::atomic<bool> stopping_{false};
  std::atomic<bool> stopped_{false};
  std::atomic<bool> halted_{false};

  std::atomic<uint64_t> droppedUnknownProto_{0};
  std::atomic<uint64_t> droppedNoHandler_{0};
  std::atomic<uint64_t> droppedNoSerializer_{0};
  std::atomic<uint64_t> droppedDecodeError_{0};
  std::atomic<uint64_t> handlerExceptions_{0};
  std::atomic<uint64_t> reentryViolations_{0};
  std::atomic<uint64_t> processedEvents_{0};
};

// ---- Protocol action bodies (need the complete Runtime type) --------------

inline TimerId Protocol::setupTimer(std::shared_ptr<ProtoTimer> timer, int64_t delayMs) {
  if (!hasTimerHandler(timer->typeId))
    throw NoHandlerRegistered(name_ + ": no timer handler for type " +
                              std::to_string(timer->typeId));
  return runtime_->timers().setup(id_, std::move(timer), delayMs, 0);
}

inline TimerId Protocol::setupPeriodicTimer(std::shared_ptr<ProtoTimer> timer,
                                            int64_t firstDelayMs, int64_t periodMs) {
  if (periodMs <= 0) throw NonPositivePeriod(name_ + ": periodic timer period must be > 0");
  if (!hasTimerHandler(timer->typeId))
    throw NoHandlerRegistered(name_ + ": no timer handler for type " +
                              std::to_string(timer->typeId));
  return runtime_->timers().setup(id_, std::move(timer), firstDelayMs, periodMs);
}

inline bool Protocol::cancelTimer(TimerId id) { return runtime_->timers().cancel(id); }

inline void Protocol::sendRequest(std::shared_ptr<const ProtoRequest> req, ProtocolId dest) {
  runtime_->sendRequest(id_, std::move(req), dest);
}

inline void Protocol::sendReply(std::shared_ptr<const ProtoReply> rep, ProtocolId dest) {
  runtime_->sendReply(id_, std::move(rep), dest);
}

inline int Protocol::triggerNotification(std::shared_ptr<const ProtoNotification> n) {
  return runtime_->triggerNotification(id_, std::move(n));
}

inline ChannelId Protocol::createChannel(const std::string& channelName,
                                         const Properties& props) {
  return runtime_->createChannel(channelName, props, id_);
}

template <class M>
void Protocol::registerMessageSerializer(ChannelId channel, uint16_t typeId, Serializer<M> s) {
  runtime_->registerSerializer(channel, typeId, erase(std::move(s)));
}

inline void Protocol::openConnection(const Host& peer, ChannelId channel) {
  runtime_->openConnection(peer, channel);
}

inline void Protocol::closeConnection(const Host& peer, ChannelId channel) {
  runtime_->closeConnection(peer, channel);
}

inline void Protocol::sendMessage(MessagePtr msg, const Host& peer, ChannelId channel,
                                  Connection sel) {
  runtime_->sendMessage(id_, msg, peer, channel, sel, id_);
}

inline void Protocol::sendMessage(MessagePtr msg, const Host& peer, ChannelId channel,
                                  Connection sel, ProtocolId destProto) {
  runtime_->sendMessage(id_, msg, peer, channel, sel, destProto);
}

inline int64_t Protocol::nowMs() const { return runtime_->nowMs(); }

template <class T>
void Protocol::subscribeNotification(uint16_t typeId,
                                     std::function<void(const T&, ProtocolId)> h) {
  addHandler(notificationHandlers_, typeId, [h = std::move(h)](Event& ev) {
    h(*std::static_pointer_cast<const T>(ev.payload), ev.source);
  });
  if (runtime_)
    runtime_->subscribe(typeId, id_);
  else
    pendingSubs_.insert(typeId);
}

inline void Protocol::unsubscribeNotification(uint16_t typeId) {
  if (runtime_)
    runtime_->unsubscribe(typeId, id_);
  else
    pendingSubs_.erase(typeId);
}

}  // namespace protokit
