#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "protokit/bytes.hpp"
#include "protokit/runtime.hpp"

namespace protokit::p2p {

// HyParView partial-view membership. Keeps a small active view of symmetric,
// connected neighbors (surfaced to other protocols as NeighborUp/NeighborDown
// notifications) and a larger passive view of candidates refreshed by a
// periodic shuffle and used to repair the active view on failures.
//
// Every message carries the sender's canonical (listen) address: over raw
// TCP the transport-level `from` of an accepted connection is an ephemeral
// endpoint and cannot identify the peer.
class HyParView : public Protocol {
 public:
  static constexpr ProtocolId kId = 300;

  static constexpr uint16_t kJoin = 301;
  static constexpr uint16_t kJoinReply = 302;
  static constexpr uint16_t kForwardJoin = 303;
  static constexpr uint16_t kDisconnect = 304;
  static constexpr uint16_t kNeighbor = 305;
  static constexpr uint16_t kNeighborReply = 306;
  static constexpr uint16_t kShuffle = 307;
  static constexpr uint16_t kShuffleReply = 308;
  static constexpr uint16_t kShuffleTimer = 310;
#ifdef HV_DIAG
  static inline std::atomic<long> dbgConfirmsSent{0}, dbgNeighborRecv{0}, dbgAsymHealed{0},
      dbgConfirmRefusedByUs{0}, dbgAsymPruned{0};
#endif
  static constexpr uint16_t kJoinRetryTimer = 311;
  static constexpr uint16_t kNeighborUp = 320;
  static constexpr uint16_t kNeighborDown = 321;

  struct Config {
    size_t activeCapacity = 5;
    size_t passiveCapacity = 30;
    int arwl = 6;
    int prwl = 3;
    int64_t shufflePeriodMs = 2000;
    size_t shuffleActiveSamples = 3;
    size_t shufflePassiveSamples = 4;
    int64_t joinRetryMs = 2000;
  };

  struct NeighborUp : ProtoNotification {
    explicit NeighborUp(Host p) : ProtoNotification(kNeighborUp), peer(p) {}
    Host peer;
  };
  struct NeighborDown : ProtoNotification {
    explicit NeighborDown(Host p) : ProtoNotification(kNeighborDown), peer(p) {}
    Host peer;
  };

  // ---- wire messages ------------------------------------------------------

  struct JoinMsg : ProtoMessage {
    explicit JoinMsg(Host s) : ProtoMessage(kJoin), sender(s) {}
    Host sender;
  };
  struct JoinReplyMsg : ProtoMessage {
    explicit JoinReplyMsg(Host s) : ProtoMessage(kJoinReply), sender(s) {}
    Host sender;
  };
  struct ForwardJoinMsg : ProtoMessage {
    ForwardJoinMsg(Host s, Host joiner, uint16_t ttl)
        : ProtoMessage(kForwardJoin), sender(s), joiner(joiner), ttl(ttl) {}
    Host sender;
    Host joiner;
    uint16_t ttl;
  };
  struct DisconnectMsg : ProtoMessage {
    explicit DisconnectMsg(Host s) : ProtoMessage(kDisconnect), sender(s) {}
    Host sender;
  };
  struct NeighborMsg : ProtoMessage {
    NeighborMsg(Host s, bool high) : ProtoMessage(kNeighbor), sender(s), highPriority(high) {}
    Host sender;
    bool highPriority;
  };
  struct NeighborReplyMsg : ProtoMessage {
    NeighborReplyMsg(Host s, bool a) : ProtoMessage(kNeighborReply), sender(s), accept(a) {}
    Host sender;
    bool accept;
  };
  struct ShuffleMsg : ProtoMessage {
    ShuffleMsg(Host s, Host origin, uint16_t ttl, std::vector<Host> sample)
        : ProtoMessage(kShuffle), sender(s), origin(origin), ttl(ttl), sample(std::move(sample)) {}
    Host sender;
    Host origin;
    uint16_t ttl;
    std::vector<Host> sample;
  };
  struct ShuffleReplyMsg : ProtoMessage {
    ShuffleReplyMsg(Host s, std::vector<Host> sample)
        : ProtoMessage(kShuffleReply), sender(s), sample(std::move(sample)) {}
    Host sender;
    std::vector<Host> sample;
  };

  struct ShuffleTimer : ProtoTimer {
    ShuffleTimer() : ProtoTimer(kShuffleTimer) {}
  };
  struct JoinRetryTimer : ProtoTimer {
    JoinRetryTimer() : ProtoTimer(kJoinRetryTimer) {}
  };

  HyParView() : Protocol("HyParView", kId) {}

  void init(const Properties& props) override {
    self_ = Host(props.get("address"), uint16_t(props.getInt("port")));
    cfg_.activeCapacity = size_t(props.getInt("hyparview.active_capacity", 5));
    cfg_.passiveCapacity = size_t(props.getInt("hyparview.passive_capacity", 30));
    cfg_.arwl = int(props.getInt("hyparview.arwl", 6));
    cfg_.prwl = int(props.getInt("hyparview.prwl", 3));
    cfg_.shufflePeriodMs = props.getInt("hyparview.shuffle_period_ms", 2000);
    cfg_.shuffleActiveSamples = size_t(props.getInt("hyparview.shuffle_ka", 3));
    cfg_.shufflePassiveSamples = size_t(props.getInt("hyparview.shuffle_kp", 4));
    cfg_.joinRetryMs = props.getInt("hyparview.join_retry_ms", 2000);
    rng_.seed(uint64_t(props.getInt("hyparview.seed", 42)) ^ (uint64_t(self_.address) << 16) ^
              self_.port);

    Properties chProps;
    chProps.set("address", props.get("address"));
    chProps.set("port", props.get("port"));
    channel_ = createChannel(props.get("channel", "tcp"), chProps);
    registerSerializers();
    registerHandlers();

    registerTimerHandler<ShuffleTimer>(kShuffleTimer,
                                       [this](ShuffleTimer&, TimerId) { onShuffleTimer(); });
    registerTimerHandler<JoinRetryTimer>(kJoinRetryTimer,
                                         [this](JoinRetryTimer&, TimerId) { onJoinRetry(); });
    setupPeriodicTimer(std::make_shared<ShuffleTimer>(), cfg_.shufflePeriodMs,
                       cfg_.shufflePeriodMs);

    if (props.has("hyparview.contact")) {
      contact_ = Host::parse(props.get("hyparview.contact"));
      const int64_t joinDelay = props.getInt("hyparview.join_delay_ms", 0);
      if (*contact_ != self_) {
        setupTimer(std::make_shared<JoinRetryTimer>(), joinDelay);
      }
    }
  }

  // ---- introspection (tests, experiment checkers) -------------------------

  const std::set<Host>& activeView() const { return active_; }
  const std::set<Host>& passiveView() const { return passive_; }
  const Host& self() const { return self_; }
  const Config& config() const { return cfg_; }

  bool viewsConsistent() const {
    if (active_.size() > cfg_.activeCapacity) return false;
    if (passive_.size() > cfg_.passiveCapacity) return false;
    if (active_.count(self_) || passive_.count(self_)) return false;
    for (const Host& h : active_)
      if (passive_.count(h)) return false;
    return true;
  }

 private:
  void registerSerializers() {
    registerMessageSerializer<JoinMsg>(channel_, kJoin,
                                       {[](const JoinMsg& m, ByteWriter& w) { w.putHost(m.sender); },
                                        [](ByteReader& r) { return JoinMsg(r.getHost()); }});
    registerMessageSerializer<JoinReplyMsg>(
        channel_, kJoinReply,
        {[](const JoinReplyMsg& m, ByteWriter& w) { w.putHost(m.sender); },
         [](ByteReader& r) { return JoinReplyMsg(r.getHost()); }});
    registerMessageSerializer<ForwardJoinMsg>(
        channel_, kForwardJoin,
        {[](const ForwardJoinMsg& m, ByteWriter& w) {
           w.putHost(m.sender);
           w.putHost(m.joiner);
           w.putU16(m.ttl);
         },
         [](ByteReader& r) {
           Host s = r.getHost();
           Host j = r.getHost();
           return ForwardJoinMsg(s, j, r.getU16());
         }});
    registerMessageSerializer<DisconnectMsg>(
        channel_, kDisconnect,
        {[](const DisconnectMsg& m, ByteWriter& w) { w.putHost(m.sender); },
         [](ByteReader& r) { return DisconnectMsg(r.getHost()); }});
    registerMessageSerializer<NeighborMsg>(
        channel_, kNeighbor,
        {[](const NeighborMsg& m, ByteWriter& w) {
           w.putHost(m.sender);
           w.putU8(m.highPriority ? 1 : 0);
         },
         [](ByteReader& r) {
           Host s = r.getHost();
           return NeighborMsg(s, r.getU8() != 0);
         }});
    registerMessageSerializer<NeighborReplyMsg>(
        channel_, kNeighborReply,
        {[](const NeighborReplyMsg& m, ByteWriter& w) {
           w.putHost(m.sender);
           w.putU8(m.accept ? 1 : 0);
         },
         [](ByteReader& r) {
           Host s = r.getHost();
           return NeighborReplyMsg(s, r.getU8() != 0);
         }});
    auto putHosts = [](const std::vector<Host>& hosts, ByteWriter& w) {
      w.putU16(uint16_t(hosts.size()));
      for (const Host& h : hosts) w.putHost(h);
    };
    auto getHosts = [](ByteReader& r) {
      std::vector<Host> hosts(r.getU16());
      for (Host& h : hosts) h = r.getHost();
      return hosts;
    };
    registerMessageSerializer<ShuffleMsg>(
        channel_, kShuffle,
        {[putHosts](const ShuffleMsg& m, ByteWriter& w) {
           w.putHost(m.sender);
           w.putHost(m.origin);
           w.putU16(m.ttl);
           putHosts(m.sample, w);
         },
         [getHosts](ByteReader& r) {
           Host s = r.getHost();
           Host o = r.getHost();
           uint16_t ttl = r.getU16();
           return ShuffleMsg(s, o, ttl, getHosts(r));
         }});
    registerMessageSerializer<ShuffleReplyMsg>(
        channel_, kShuffleReply,
        {[putHosts](const ShuffleReplyMsg& m, ByteWriter& w) {
           w.putHost(m.sender);
           putHosts(m.sample, w);
         },
         [getHosts](ByteReader& r) {
           Host s = r.getHost();
           return ShuffleReplyMsg(s, getHosts(r));
         }});
  }

  void registerHandlers() {
    registerMessageHandler<JoinMsg>(
        channel_, kJoin,
        [this](const JoinMsg& m, const Host&, ProtocolId, ChannelId) { onJoin(m); });
    registerMessageHandler<JoinReplyMsg>(
        channel_, kJoinReply,
        [this](const JoinReplyMsg& m, const Host&, ProtocolId, ChannelId) { onJoinReply(m); });
    registerMessageHandler<ForwardJoinMsg>(
        channel_, kForwardJoin,
        [this](const ForwardJoinMsg& m, const Host&, ProtocolId, ChannelId) { onForwardJoin(m); });
    registerMessageHandler<DisconnectMsg>(
        channel_, kDisconnect,
        [this](const DisconnectMsg& m, const Host&, ProtocolId, ChannelId) { onDisconnect(m); });
    registerMessageHandler<NeighborMsg>(
        channel_, kNeighbor,
        [this](const NeighborMsg& m, const Host&, ProtocolId, ChannelId) { onNeighbor(m); });
    registerMessageHandler<NeighborReplyMsg>(
        channel_, kNeighborReply,
        [this](const NeighborReplyMsg& m, const Host&, ProtocolId, ChannelId) {
          onNeighborReply(m);
        });
    registerMessageHandler<ShuffleMsg>(
        channel_, kShuffle,
        [this](const ShuffleMsg& m, const Host&, ProtocolId, ChannelId) { onShuffle(m); });
    registerMessageHandler<ShuffleReplyMsg>(
        channel_, kShuffleReply,
        [this](const ShuffleReplyMsg& m, const Host&, ProtocolId, ChannelId) {
          onShuffleReply(m);
        });

    registerChannelEventHandler(channel_, ChannelEventKind::OutConnectionUp,
                                [this](const ChannelEvent& ev, ChannelId) { onConnUp(ev.peer); });
    registerChannelEventHandler(
        channel_, ChannelEventKind::OutConnectionFailed,
        [this](const ChannelEvent& ev, ChannelId) { onConnFailed(ev.peer); });
    registerChannelEventHandler(
        channel_, ChannelEventKind::OutConnectionDown,
        [this](const ChannelEvent& ev, ChannelId) { onConnDown(ev.peer); });
    registerChannelEventHandler(channel_, ChannelEventKind::InConnectionUp,
                                [this](const ChannelEvent&, ChannelId) {});
    registerChannelEventHandler(channel_, ChannelEventKind::InConnectionDown,
                                [this](const ChannelEvent&, ChannelId) {});
  }

  // ---- connection-aware send ----------------------------------------------

  void sendTo(const Host& peer, MessagePtr msg) {
    if (peer == self_) return;
    if (up_.count(peer)) {
      sendMessage(std::move(msg), peer, channel_);
      maybeCloseTemp(peer);
    } else {
      pendingSends_[peer].push_back(std::move(msg));
      openConnection(peer, channel_);
    }
  }

  void onConnUp(const Host& peer) {
    up_.insert(peer);
    auto it = pendingSends_.find(peer);
    if (it != pendingSends_.end()) {
      for (auto& m : it->second) sendMessage(m, peer, channel_);
      pendingSends_.erase(it);
    }
    if (active_.count(peer)) {
      notifyUp(peer);
    } else {
      maybeCloseTemp(peer);
    }
  }

  void onConnFailed(const Host& peer) {
    pendingSends_.erase(peer);
    awaiting_.erase(peer);
    if (active_.count(peer)) {
      neighborFailure(peer);
      return;
    }
    if (promoting_ && *promoting_ == peer) {
      promoting_.reset();
      passive_.erase(peer);
      tryPromote();
    }
  }

  void onConnDown(const Host& peer) {
    up_.erase(peer);
    pendingSends_.erase(peer);
    awaiting_.erase(peer);
    if (promoting_ && *promoting_ == peer) {
      // The promotion target died mid-handshake; without this the promotion
      // slot stays occupied forever and the node wedges with an empty view.
      promoting_.reset();
      passive_.erase(peer);
    }
    if (active_.count(peer)) {
      neighborFailure(peer);
    } else {
      tryPromote();
    }
  }

  // Keep connections only to peers we still care about.
  void maybeCloseTemp(const Host& peer) {
    if (active_.count(peer)) return;
    if (awaiting_.count(peer)) return;
    if (promoting_ && *promoting_ == peer) return;
    if (pendingSends_.count(peer)) return;
    closeConnection(peer, channel_);
    up_.erase(peer);
  }

  // ---- membership ----------------------------------------------------------

  void onJoin(const JoinMsg& m) {
    addToActive(m.sender);
    sendTo(m.sender, std::make_shared<JoinReplyMsg>(self_));
    auto fwd = std::make_shared<ForwardJoinMsg>(self_, m.sender, uint16_t(cfg_.arwl));
    for (const Host& n : active_) {
      if (n != m.sender) sendTo(n, fwd);
    }
  }

  void onJoinReply(const JoinReplyMsg& m) {
    awaiting_.erase(m.sender);
    addToActive(m.sender);
  }

  void onForwardJoin(const ForwardJoinMsg& m) {
    const Host& joiner = m.joiner;
    if (joiner == self_) return;
    if (m.ttl == 0 || active_.size() <= 1) {
      attachTo(joiner);
      return;
    }
    if (int(m.ttl) == cfg_.prwl) addToPassive(joiner);
    std::vector<Host> candidates;
    for (const Host& n : active_) {
      if (n != m.sender && n != joiner) candidates.push_back(n);
    }
    if (candidates.empty()) {
      attachTo(joiner);
      return;
    }
    sendTo(pick(candidates), std::make_shared<ForwardJoinMsg>(self_, joiner, uint16_t(m.ttl - 1)));
  }

  // Terminal ForwardJoin: adopt the joiner and tell it to adopt us.
  void attachTo(const Host& joiner) {
    if (active_.count(joiner)) return;
    addToActive(joiner);
    awaiting_.insert(joiner);
    sendTo(joiner, std::make_shared<NeighborMsg>(self_, true));
  }

  void onDisconnect(const DisconnectMsg& m) {
    if (!active_.count(m.sender)) return;
    active_.erase(m.sender);
    notifyDownIfNeeded(m.sender);
    addToPassive(m.sender);
    closeConnection(m.sender, channel_);
    up_.erase(m.sender);
    tryPromote();
  }

  void onNeighbor(const NeighborMsg& m) {
    // Accepting a peer that is already a neighbor keeps the periodic
    // symmetry confirms idempotent even at capacity.
    const bool accept =
        m.highPriority || active_.count(m.sender) || active_.size() < cfg_.activeCapacity;
#ifdef HV_DIAG
    ++dbgNeighborRecv;
    if (!m.highPriority && !active_.count(m.sender)) {
      if (accept) ++dbgAsymHealed; else ++dbgConfirmRefusedByUs;
    }
#endif
    if (accept) addToActive(m.sender);
    sendTo(m.sender, std::make_shared<NeighborReplyMsg>(self_, accept));
  }

  void onNeighborReply(const NeighborReplyMsg& m) {
    awaiting_.erase(m.sender);
    const bool wasPromotion = promoting_ && *promoting_ == m.sender;
    if (wasPromotion) promoting_.reset();
    if (m.accept) {
      addToActive(m.sender);
    } else if (active_.count(m.sender)) {
      // A refused confirm: the link went one-sided (crossed disconnects,
      // message loss). Drop our half and repair from the passive view.
#ifdef HV_DIAG
      ++dbgAsymPruned;
#endif
      active_.erase(m.sender);
      notifyDownIfNeeded(m.sender);
      addToPassive(m.sender);
      closeConnection(m.sender, channel_);
      up_.erase(m.sender);
      tryPromote();
    } else {
      maybeCloseTemp(m.sender);
      if (wasPromotion) tryPromote();
    }
  }

  void neighborFailure(const Host& peer) {
    active_.erase(peer);
    notifyDownIfNeeded(peer);
    tryPromote();
  }

  void tryPromote() {
    if (promoting_ || active_.size() >= cfg_.activeCapacity) return;
    std::vector<Host> candidates;
    for (const Host& h : passive_) {
      if (!active_.count(h)) candidates.push_back(h);
    }
    if (candidates.empty()) return;  // periodic timer keeps retrying
    const Host candidate = pick(candidates);
    promoting_ = candidate;
    awaiting_.insert(candidate);
    sendTo(candidate, std::make_shared<NeighborMsg>(self_, active_.empty()));
  }

  void addToActive(const Host& peer) {
    if (peer == self_ || active_.count(peer)) return;
    while (active_.size() >= cfg_.activeCapacity) {
      const Host victim = pick(std::vector<Host>(active_.begin(), active_.end()));
      sendTo(victim, std::make_shared<DisconnectMsg>(self_));
      active_.erase(victim);
      notifyDownIfNeeded(victim);
      addToPassive(victim);
      closeConnection(victim, channel_);
      up_.erase(victim);
    }
    passive_.erase(peer);
    active_.insert(peer);
    if (promoting_ && *promoting_ == peer) promoting_.reset();
    if (up_.count(peer)) {
      notifyUp(peer);
    } else {
      openConnection(peer, channel_);
    }
  }

  void addToPassive(const Host& peer) {
    if (peer == self_ || active_.count(peer) || passive_.count(peer)) return;
    evictFromPassive(1, {});
    passive_.insert(peer);
  }

  void evictFromPassive(size_t slotsNeeded, const std::vector<Host>& preferVictims) {
    while (passive_.size() + slotsNeeded > cfg_.passiveCapacity) {
      Host victim{};
      bool found = false;
      for (const Host& v : preferVictims) {
        if (passive_.count(v)) {
          victim = v;
          found = true;
          break;
        }
      }
      if (!found) victim = pick(std::vector<Host>(passive_.begin(), passive_.end()));
      passive_.erase(victim);
    }
  }

  // ---- shuffle -------------------------------------------------------------

  void onShuffleTimer() {
    if (active_.size() < cfg_.activeCapacity) tryPromote();
    if (active_.empty()) {
      if (passive_.empty() && contact_ && *contact_ != self_) onJoinRetry();
      return;
    }
    // Symmetry confirm: a neighbor that dropped us (crossed disconnects)
    // either re-adds us or refuses, and a refusal prunes our half of the
    // link. Either way one-sided links disappear within a period.
    auto confirm = std::make_shared<NeighborMsg>(self_, false);
    for (const Host& n : active_) sendTo(n, confirm);
#ifdef HV_DIAG
    dbgConfirmsSent += long(active_.size());
#endif
    std::vector<Host> sample = sampleOf(active_, cfg_.shuffleActiveSamples);
    auto passiveSample = sampleOf(passive_, cfg_.shufflePassiveSamples);
    sample.insert(sample.end(), passiveSample.begin(), passiveSample.end());
    lastShuffleSample_ = sample;
    const Host target = pick(std::vector<Host>(active_.begin(), active_.end()));
    sendTo(target, std::make_shared<ShuffleMsg>(self_, self_, uint16_t(cfg_.prwl), sample));
  }

  void onShuffle(const ShuffleMsg& m) {
    if (m.origin == self_) return;
    if (m.ttl > 1) {
      std::vector<Host> candidates;
      for (const Host& n : active_) {
        if (n != m.sender && n != m.origin) candidates.push_back(n);
      }
      if (!candidates.empty()) {
        sendTo(pick(candidates),
               std::make_shared<ShuffleMsg>(self_, m.origin, uint16_t(m.ttl - 1), m.sample));
        return;
      }
    }
    const auto reply = sampleOf(passive_, m.sample.size());
    sendTo(m.origin, std::make_shared<ShuffleReplyMsg>(self_, reply));
    integrate(m.sample, reply);
  }

  void onShuffleReply(const ShuffleReplyMsg& m) {
    integrate(m.sample, lastShuffleSample_);
    maybeCloseTemp(m.sender);
  }

  void integrate(const std::vector<Host>& received, const std::vector<Host>& sentEntries) {
    for (const Host& h : received) {
      if (h == self_ || active_.count(h) || passive_.count(h)) continue;
      evictFromPassive(1, sentEntries);
      passive_.insert(h);
    }
  }

  // ---- join ----------------------------------------------------------------

  void onJoinRetry() {
    if (!contact_ || !active_.empty()) return;
    awaiting_.insert(*contact_);
    sendTo(*contact_, std::make_shared<JoinMsg>(self_));
    setupTimer(std::make_shared<JoinRetryTimer>(), cfg_.joinRetryMs);
  }

  // ---- notifications -------------------------------------------------------

  void notifyUp(const Host& peer) {
    if (notified_.count(peer)) return;
    notified_.insert(peer);
    triggerNotification(std::make_shared<NeighborUp>(peer));
  }

  void notifyDownIfNeeded(const Host& peer) {
    if (!notified_.erase(peer)) return;
    triggerNotification(std::make_shared<NeighborDown>(peer));
  }

  // ---- sampling ------------------------------------------------------------

  Host pick(const std::vector<Host>& from) {
    return from[std::uniform_int_distribution<size_t>(0, from.size() - 1)(rng_)];
  }

  std::vector<Host> sampleOf(const std::set<Host>& from, size_t k) {
    std::vector<Host> all(from.begin(), from.end());
    std::shuffle(all.begin(), all.end(), rng_);
    if (all.size() > k) all.resize(k);
    return all;
  }

  Host self_;
  Config cfg_;
  ChannelId channel_ = -1;
  std::optional<Host> contact_;
  std::mt19937_64 rng_;

  std::set<Host> active_;
  std::set<Host> passive_;
  std::set<Host> up_;        // OUT connections currently established
  std::set<Host> notified_;  // peers with an outstanding NeighborUp
  std::set<Host> awaiting_;  // peers we expect a reply from
  std::optional<Host> promoting_;
  std::map<Host, std::vector<MessagePtr>> pendingSends_;
  std::vector<Host> lastShuffleSample_;
};

}  // namespace protokit::p2p
