#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "protokit/bytes.hpp"
#include "protokit/runtime.hpp"

namespace protokit::smr {

// Ballot number: (round, replica index), ordered lexicographically so a
// replica bumping the round always supersedes the previous regime.
struct Ballot {
  uint32_t round = 0;
  uint16_t node = 0;
  auto operator<=>(const Ballot&) const = default;
};

// One command in the replicated log. id 0 marks a no-op (used by a fresh
// leader to fill gaps and as an idle-time leadership heartbeat); no-ops are
// never surfaced to the state machine.
struct Op {
  uint64_t id = 0;
  std::vector<uint8_t> payload;
  bool noop() const { return id == 0; }
};

inline void putOp(const Op& op, ByteWriter& w) {
  w.putU64(op.id);
  w.putBlob(op.payload);
}
inline Op getOp(ByteReader& r) {
  Op op;
  op.id = r.getU64();
  op.payload = r.getBlob();
  return op;
}
inline void putBallot(const Ballot& b, ByteWriter& w) {
  w.putU32(b.round);
  w.putU16(b.node);
}
inline Ballot getBallot(ByteReader& r) {
  Ballot b;
  b.round = r.getU32();
  b.node = r.getU16();
  return b;
}

// Multi-decree Paxos over a static replica set. Two learning variants:
//   classic       - acceptors broadcast Accepted to everyone; each replica
//                   decides when it observes a majority for a slot.
//   dist-learner  - acceptors send Accepted only to the proposing leader,
//                   which decides and broadcasts Decided.
// The leader pipelines up to `window` undecided slots. Non-leaders forward
// submitted ops to the leader (ForwardOp). Replica 0 starts as leader under
// ballot (0,0); leadership moves via Prepare after the current leader goes
// quiet (timeout or channel-level suspicion), with a randomized delay so
// contenders rarely duel.
class MultiPaxos : public Protocol {
 public:
  static constexpr ProtocolId kId = 500;

  static constexpr uint16_t kPrepare = 501;
  static constexpr uint16_t kPrepareOk = 502;
  static constexpr uint16_t kAccept = 503;
  static constexpr uint16_t kAccepted = 504;
  static constexpr uint16_t kDecided = 505;
  static constexpr uint16_t kForwardOp = 506;
  static constexpr uint16_t kSuspectTimer = 510;
  static constexpr uint16_t kReconnectTimer = 511;
  static constexpr uint16_t kEnforceTimer = 512;
  static constexpr uint16_t kProposeRequest = 520;
  static constexpr uint16_t kDecidedNotification = 530;
  static constexpr uint16_t kLeaderNotification = 531;

  enum class Variant { Classic, DistinguishedLearner };

  // ---- upper-layer interface ----------------------------------------------

  struct ProposeRequest : ProtoRequest {
    ProposeRequest(uint64_t id, std::vector<uint8_t> payload)
        : ProtoRequest(kProposeRequest), op{id, std::move(payload)} {}
    Op op;
  };

  struct DecidedNotification : ProtoNotification {
    DecidedNotification(uint64_t slot, Op op)
        : ProtoNotification(kDecidedNotification), slot(slot), op(std::move(op)) {}
    uint64_t slot;
    Op op;
  };

  struct LeaderNotification : ProtoNotification {
    LeaderNotification(Host leader, bool self)
        : ProtoNotification(kLeaderNotification), leader(leader), self(self) {}
    Host leader;
    bool self;
  };

  // ---- wire messages ------------------------------------------------------

  struct PrepareMsg : ProtoMessage {
    PrepareMsg(uint16_t node, Ballot b, uint64_t executeNext)
        : ProtoMessage(kPrepare), node(node), ballot(b), executeNext(executeNext) {}
    uint16_t node;
    Ballot ballot;
    uint64_t executeNext;  // acceptors only report state for slots we still need
  };
  struct PrepareOkMsg : ProtoMessage {
    PrepareOkMsg(uint16_t node, Ballot b, uint64_t executeNext,
                 std::map<uint64_t, std::pair<Ballot, Op>> accepted)
        : ProtoMessage(kPrepareOk),
          node(node),
          ballot(b),
          executeNext(executeNext),
          accepted(std::move(accepted)) {}
    uint16_t node;
    Ballot ballot;
    uint64_t executeNext;
    std::map<uint64_t, std::pair<Ballot, Op>> accepted;
  };
  struct AcceptMsg : ProtoMessage {
    AcceptMsg(uint16_t node, Ballot b, uint64_t slot, Op op)
        : ProtoMessage(kAccept), node(node), ballot(b), slot(slot), op(std::move(op)) {}
    uint16_t node;
    Ballot ballot;
    uint64_t slot;
    Op op;
  };
  struct AcceptedMsg : ProtoMessage {
    AcceptedMsg(uint16_t node, Ballot b, uint64_t slot, uint64_t executeNext)
        : ProtoMessage(kAccepted), node(node), ballot(b), slot(slot), executeNext(executeNext) {}
    uint16_t node;
    Ballot ballot;
    uint64_t slot;
    uint64_t executeNext;  // lets the leader repair this acceptor's log gaps
  };
  struct DecidedMsg : ProtoMessage {
    DecidedMsg(uint16_t node, uint64_t slot, Op op)
        : ProtoMessage(kDecided), node(node), slot(slot), op(std::move(op)) {}
    uint16_t node;
    uint64_t slot;
    Op op;
  };
  struct ForwardOpMsg : ProtoMessage {
    ForwardOpMsg(uint16_t node, Op op) : ProtoMessage(kForwardOp), node(node), op(std::move(op)) {}
    uint16_t node;
    Op op;
  };

  struct SuspectTimer : ProtoTimer {
    SuspectTimer() : ProtoTimer(kSuspectTimer) {}
  };
  struct ReconnectTimer : ProtoTimer {
    ReconnectTimer() : ProtoTimer(kReconnectTimer) {}
  };
  struct EnforceTimer : ProtoTimer {
    EnforceTimer() : ProtoTimer(kEnforceTimer) {}
  };

  MultiPaxos() : Protocol("MultiPaxos", kId) {}

  void init(const Properties& props) override {
    self_ = Host(props.get("address"), uint16_t(props.getInt("port")));
    parseReplicas(props.get("smr.replicas"));
    const std::string variant = props.get("smr.variant", "classic");
    if (variant == "classic") {
      variant_ = Variant::Classic;
    } else if (variant == "dist-learner") {
      variant_ = Variant::DistinguishedLearner;
    } else {
      throw InvalidConfig("smr.variant must be classic or dist-learner, got " + variant);
    }
    window_ = size_t(props.getInt("smr.window", 16));
    suspectPeriodMs_ = props.getInt("smr.suspect_period_ms", 1000);
    reconnectPeriodMs_ = props.getInt("smr.reconnect_period_ms", 500);
    leaderTimeoutMs_ = props.getInt("smr.leader_timeout_ms", 2000);
    enforceMaxDelayMs_ = props.getInt("smr.enforce_max_delay_ms", 500);
    logRetain_ = props.getInt("smr.log_retain", -1);  // -1 = keep everything
    rng_.seed(uint64_t(props.getInt("smr.seed", 7)) ^ (uint64_t(self_.address) << 16) ^ self_.port ^
              (uint64_t(myIndex_) << 48));

    Properties chProps;
    chProps.set("address", props.get("address"));
    chProps.set("port", props.get("port"));
    channel_ = createChannel(props.get("smr.channel", "tcp"), chProps);
    registerSerializers();
    registerHandlers();

    registerRequestHandler<ProposeRequest>(kProposeRequest,
                                           [this](const ProposeRequest& r, ProtocolId src) {
                                             submit(r.op, src);
                                           });
    registerTimerHandler<SuspectTimer>(kSuspectTimer,
                                       [this](SuspectTimer&, TimerId) { onSuspectTick(); });
    registerTimerHandler<ReconnectTimer>(kReconnectTimer,
                                         [this](ReconnectTimer&, TimerId) { onReconnectTick(); });
    registerTimerHandler<EnforceTimer>(kEnforceTimer,
                                       [this](EnforceTimer&, TimerId) { onEnforce(); });
    setupPeriodicTimer(std::make_shared<SuspectTimer>(), suspectPeriodMs_, suspectPeriodMs_);
    setupPeriodicTimer(std::make_shared<ReconnectTimer>(), reconnectPeriodMs_, reconnectPeriodMs_);

    lastLeaderHeard_ = nowMs();
    // Everyone starts promised to (0, 0); replica 0 leads without a Prepare.
    if (myIndex_ == 0) {
      amLeader_ = true;
      announceLeader();
    }
    onReconnectTick();
  }

  // ---- introspection -------------------------------------------------------

  bool isLeader() const { return amLeader_; }
  Ballot promisedBallot() const { return promised_; }
  Ballot leaderBallot() const { return leaderBallot_; }
  const Host& self() const { return self_; }
  Host leaderHost() const { return replicas_[leaderBallot_.node]; }
  uint64_t executeNext() const { return executeNext_; }
  const std::map<uint64_t, Op>& decidedLog() const { return decided_; }
  size_t inflight() const { return inflight_.size(); }
  Variant variant() const { return variant_; }

 private:
  void parseReplicas(const std::string& list) {
    std::istringstream in(list);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) replicas_.push_back(Host::parse(item));
    }
    if (replicas_.empty()) throw InvalidConfig("smr.replicas is empty");
    myIndex_ = uint16_t(-1);
    for (size_t i = 0; i < replicas_.size(); ++i) {
      if (replicas_[i] == self_) myIndex_ = uint16_t(i);
    }
    if (myIndex_ == uint16_t(-1))
      throw InvalidConfig("local address " + self_.toString() + " not in smr.replicas");
  }

  size_t quorum() const { return replicas_.size() / 2 + 1; }

  void registerSerializers() {
    registerMessageSerializer<PrepareMsg>(channel_, kPrepare,
                                          {[](const PrepareMsg& m, ByteWriter& w) {
                                             w.putU16(m.node);
                                             putBallot(m.ballot, w);
                                             w.putU64(m.executeNext);
                                           },
                                           [](ByteReader& r) {
                                             uint16_t n = r.getU16();
                                             Ballot b = getBallot(r);
                                             return PrepareMsg(n, b, r.getU64());
                                           }});
    registerMessageSerializer<PrepareOkMsg>(
        channel_, kPrepareOk,
        {[](const PrepareOkMsg& m, ByteWriter& w) {
           w.putU16(m.node);
           putBallot(m.ballot, w);
           w.putU64(m.executeNext);
           w.putU32(uint32_t(m.accepted.size()));
           for (const auto& [slot, entry] : m.accepted) {
             w.putU64(slot);
             putBallot(entry.first, w);
             putOp(entry.second, w);
           }
         },
         [](ByteReader& r) {
           uint16_t n = r.getU16();
           Ballot b = getBallot(r);
           uint64_t en = r.getU64();
           uint32_t count = r.getU32();
           std::map<uint64_t, std::pair<Ballot, Op>> accepted;
           for (uint32_t i = 0; i < count; ++i) {
             uint64_t slot = r.getU64();
             Ballot ab = getBallot(r);
             accepted.emplace(slot, std::make_pair(ab, getOp(r)));
           }
           return PrepareOkMsg(n, b, en, std::move(accepted));
         }});
    registerMessageSerializer<AcceptMsg>(channel_, kAccept,
                                         {[](const AcceptMsg& m, ByteWriter& w) {
                                            w.putU16(m.node);
                                            putBallot(m.ballot, w);
                                            w.putU64(m.slot);
                                            putOp(m.op, w);
                                          },
                                          [](ByteReader& r) {
                                            uint16_t n = r.getU16();
                                            Ballot b = getBallot(r);
                                            uint64_t slot = r.getU64();
                                            return AcceptMsg(n, b, slot, getOp(r));
                                          }});
    registerMessageSerializer<AcceptedMsg>(channel_, kAccepted,
                                           {[](const AcceptedMsg& m, ByteWriter& w) {
                                              w.putU16(m.node);
                                              putBallot(m.ballot, w);
                                              w.putU64(m.slot);
                                              w.putU64(m.executeNext);
                                            },
                                            [](ByteReader& r) {
                                              uint16_t n = r.getU16();
                                              Ballot b = getBallot(r);
                                              uint64_t slot = r.getU64();
                                              return AcceptedMsg(n, b, slot, r.getU64());
                                            }});
    registerMessageSerializer<DecidedMsg>(channel_, kDecided,
                                          {[](const DecidedMsg& m, ByteWriter& w) {
                                             w.putU16(m.node);
                                             w.putU64(m.slot);
                                             putOp(m.op, w);
                                           },
                                           [](ByteReader& r) {
                                             uint16_t n = r.getU16();
                                             uint64_t slot = r.getU64();
                                             return DecidedMsg(n, slot, getOp(r));
                                           }});
    registerMessageSerializer<ForwardOpMsg>(channel_, kForwardOp,
                                            {[](const ForwardOpMsg& m, ByteWriter& w) {
                                               w.putU16(m.node);
                                               putOp(m.op, w);
                                             },
                                             [](ByteReader& r) {
                                               uint16_t n = r.getU16();
                                               return ForwardOpMsg(n, getOp(r));
                                             }});
  }

  void registerHandlers() {
    registerMessageHandler<PrepareMsg>(
        channel_, kPrepare,
        [this](const PrepareMsg& m, const Host&, ProtocolId, ChannelId) { onPrepare(m); });
    registerMessageHandler<PrepareOkMsg>(
        channel_, kPrepareOk,
        [this](const PrepareOkMsg& m, const Host&, ProtocolId, ChannelId) { onPrepareOk(m); });
    registerMessageHandler<AcceptMsg>(
        channel_, kAccept,
        [this](const AcceptMsg& m, const Host&, ProtocolId, ChannelId) { onAccept(m); });
    registerMessageHandler<AcceptedMsg>(
        channel_, kAccepted,
        [this](const AcceptedMsg& m, const Host&, ProtocolId, ChannelId) { onAccepted(m); });
    registerMessageHandler<DecidedMsg>(
        channel_, kDecided,
        [this](const DecidedMsg& m, const Host&, ProtocolId, ChannelId) { onDecided(m); });
    registerMessageHandler<ForwardOpMsg>(
        channel_, kForwardOp,
        [this](const ForwardOpMsg& m, const Host&, ProtocolId, ChannelId) { onForwardOp(m); });

    registerChannelEventHandler(channel_, ChannelEventKind::OutConnectionUp,
                                [this](const ChannelEvent& ev, ChannelId) { up_.insert(ev.peer); });
    registerChannelEventHandler(channel_, ChannelEventKind::OutConnectionDown,
                                [this](const ChannelEvent& ev, ChannelId) { up_.erase(ev.peer); });
    registerChannelEventHandler(channel_, ChannelEventKind::OutConnectionFailed,
                                [this](const ChannelEvent& ev, ChannelId) { up_.erase(ev.peer); });
    registerChannelEventHandler(channel_, ChannelEventKind::InConnectionUp,
                                [this](const ChannelEvent&, ChannelId) {});
    registerChannelEventHandler(channel_, ChannelEventKind::InConnectionDown,
                                [this](const ChannelEvent&, ChannelId) {});
    registerChannelEventHandler(channel_, ChannelEventKind::PeerSuspected,
                                [this](const ChannelEvent& ev, ChannelId) {
                                  if (!amLeader_ && ev.peer == leaderHost()) armEnforce();
                                });
  }

  // ---- transport ------------------------------------------------------------

  // Self-addressed messages are dispatched as direct local calls: the sender
  // runs in its own handler context already, so no queue hop is needed.
  void sendToNode(uint16_t idx, const std::shared_ptr<const ProtoMessage>& msg) {
    if (idx == myIndex_) {
      localDeliver(*msg);
      return;
    }
    sendMessage(msg, replicas_[idx], channel_);
  }

  void broadcast(const std::shared_ptr<const ProtoMessage>& msg, bool includeSelf) {
    for (uint16_t i = 0; i < replicas_.size(); ++i) {
      if (i == myIndex_ && !includeSelf) continue;
      sendToNode(i, msg);
    }
  }

  void localDeliver(const ProtoMessage& msg) {
    switch (msg.typeId) {
      case kPrepare: onPrepare(static_cast<const PrepareMsg&>(msg)); break;
      case kPrepareOk: onPrepareOk(static_cast<const PrepareOkMsg&>(msg)); break;
      case kAccept: onAccept(static_cast<const AcceptMsg&>(msg)); break;
      case kAccepted: onAccepted(static_cast<const AcceptedMsg&>(msg)); break;
      case kDecided: onDecided(static_cast<const DecidedMsg&>(msg)); break;
      case kForwardOp: onForwardOp(static_cast<const ForwardOpMsg&>(msg)); break;
      default: break;
    }
  }

  // ---- proposer -------------------------------------------------------------

  void submit(Op op, ProtocolId) {
    if (amLeader_) {
      queue_.push_back(std::move(op));
      pump();
    } else {
      sendToNode(leaderBallot_.node, std::make_shared<ForwardOpMsg>(myIndex_, std::move(op)));
    }
  }

  void onForwardOp(const ForwardOpMsg& m) {
    if (amLeader_) {
      queue_.push_back(m.op);
      pump();
    } else if (leaderBallot_.node != m.node && leaderBallot_.node != myIndex_) {
      sendToNode(leaderBallot_.node, std::make_shared<ForwardOpMsg>(myIndex_, m.op));
    }
  }

  void pump() {
    while (!queue_.empty() && inflight_.size() < window_) {
      const uint64_t slot = nextSlot_++;
      Op op = std::move(queue_.front());
      queue_.pop_front();
      propose(slot, std::move(op));
    }
  }

  void propose(uint64_t slot, Op op) {
    inflight_[slot] = op;
    broadcast(std::make_shared<AcceptMsg>(myIndex_, leaderBallot_, slot, std::move(op)), true);
  }

  // ---- acceptor -------------------------------------------------------------

  void onPrepare(const PrepareMsg& m) {
    if (m.ballot <= promised_ && !(m.ballot == promised_ && m.node == myIndex_)) return;
    promised_ = m.ballot;
    if (preparing_ && prepareBallot_ < promised_) preparing_ = false;
    // The proposer re-proposes only slots at or above its own executeNext, so
    // anything below it is dead weight (and after a long run, a lot of it).
    std::map<uint64_t, std::pair<Ballot, Op>> snapshot(accepted_.lower_bound(m.executeNext),
                                                       accepted_.end());
    // Decided slots leave accepted_ once executed, but a new leader must
    // still learn their values or it would fill them with no-ops. Report
    // them under a sentinel ballot that always wins the merge.
    constexpr Ballot kDecidedBallot{0xFFFFFFFFu, 0xFFFFu};
    for (auto it = decided_.lower_bound(m.executeNext); it != decided_.end(); ++it)
      snapshot[it->first] = {kDecidedBallot, it->second};
    sendToNode(m.node,
               std::make_shared<PrepareOkMsg>(myIndex_, m.ballot, executeNext_, std::move(snapshot)));
  }

  void onAccept(const AcceptMsg& m) {
    if (m.ballot < promised_) return;
    promised_ = m.ballot;
    observeLeader(m.ballot);
    if (auto dit = decided_.find(m.slot); dit != decided_.end()) {
      // Already decided. Acknowledging is only safe when the values match
      // (Accepted carries no value, so an ack would count toward whatever the
      // proposer has in flight); otherwise correct the proposer directly.
      if (dit->second.id == m.op.id && dit->second.payload == m.op.payload)
        ackAccept(m);
      else
        sendToNode(m.node, std::make_shared<DecidedMsg>(myIndex_, m.slot, dit->second));
      return;
    }
    accepted_[m.slot] = {m.ballot, m.op};
    ackAccept(m);
    if (variant_ == Variant::Classic) checkDecideClassic(m.slot);
  }

  void ackAccept(const AcceptMsg& m) {
    auto ack = std::make_shared<AcceptedMsg>(myIndex_, m.ballot, m.slot, executeNext_);
    if (variant_ == Variant::Classic) {
      broadcast(ack, true);
    } else {
      sendToNode(m.node, ack);
    }
  }

  // ---- learner ---------------------------------------------------------------

  void onAccepted(const AcceptedMsg& m) {
    // Acks for slots already executed here would accumulate forever: the
    // decide() cleanup for that slot has already run.
    if (!decided_.count(m.slot)) acks_[m.slot][m.ballot].insert(m.node);
    if (m.node != myIndex_) {
      auto& en = peerExecuteNext_[m.node];
      en = std::max(en, m.executeNext);
    }
    if (variant_ == Variant::Classic) {
      checkDecideClassic(m.slot);
    } else if (amLeader_ && m.ballot == leaderBallot_) {
      auto it = inflight_.find(m.slot);
      if (it != inflight_.end() && acks_[m.slot][m.ballot].size() >= quorum()) {
        const Op op = it->second;
        decide(m.slot, op);
        broadcast(std::make_shared<DecidedMsg>(myIndex_, m.slot, op), false);
      }
    }
    if (amLeader_ && m.node != myIndex_) repairPeer(m.node, m.executeNext);
  }

  void checkDecideClassic(uint64_t slot) {
    if (decided_.count(slot)) return;
    auto accIt = accepted_.find(slot);
    if (accIt == accepted_.end()) return;
    const Ballot b = accIt->second.first;
    auto slotAcks = acks_.find(slot);
    if (slotAcks == acks_.end()) return;
    auto ballotAcks = slotAcks->second.find(b);
    if (ballotAcks == slotAcks->second.end() || ballotAcks->second.size() < quorum()) return;
    decide(slot, accIt->second.second);
  }

  void onDecided(const DecidedMsg& m) {
    observeLeaderNode(m.node);
    decide(m.slot, m.op);
  }

  void decide(uint64_t slot, const Op& op) {
    if (!decided_.emplace(slot, op).second) return;
    inflight_.erase(slot);
    while (true) {
      auto it = decided_.find(executeNext_);
      if (it == decided_.end()) break;
      if (!it->second.noop())
        triggerNotification(std::make_shared<DecidedNotification>(executeNext_, it->second));
      accepted_.erase(executeNext_);
      acks_.erase(executeNext_);
      ++executeNext_;
    }
    truncateLog();
    if (amLeader_) pump();
  }

  // Drop executed entries that no replica can ask for anymore: every replica
  // re-proposes and repairs only from its own executeNext upward, so slots
  // below the group-wide minimum are unreachable. Peer progress is known from
  // the executeNext piggybacked on Accepted; until every peer has reported,
  // nothing is dropped. Disabled (the default) the full log is retained,
  // which introspection and replay checks rely on.
  void truncateLog() {
    if (logRetain_ < 0) return;
    uint64_t floor = executeNext_ > uint64_t(logRetain_) ? executeNext_ - uint64_t(logRetain_) : 0;
    for (uint16_t i = 0; i < replicas_.size(); ++i) {
      if (i == myIndex_) continue;
      auto it = peerExecuteNext_.find(i);
      if (it == peerExecuteNext_.end()) return;
      floor = std::min(floor, it->second);
    }
    decided_.erase(decided_.begin(), decided_.lower_bound(floor));
  }

  // Resend decisions an acceptor is missing, inferred from the executeNext it
  // piggybacks on Accepted. Decided carries no further acknowledgement
  // traffic, so a repair burst cannot amplify itself; the per-peer cooldown
  // keeps redundant bursts off the wire while a slow peer catches up.
  void repairPeer(uint16_t node, uint64_t peerExecuteNext) {
    if (peerExecuteNext >= executeNext_) return;
    const int64_t now = nowMs();
    auto [it, fresh] = lastRepairMs_.try_emplace(node, -1);
    if (!fresh && it->second >= 0 && now - it->second < 200) return;
    it->second = now;
    const uint64_t limit = std::min(executeNext_, peerExecuteNext + 32);
    for (uint64_t s = peerExecuteNext; s < limit; ++s) {
      auto dit = decided_.find(s);
      if (dit == decided_.end()) continue;
      sendToNode(node, std::make_shared<DecidedMsg>(myIndex_, s, dit->second));
    }
  }

  // ---- leadership --------------------------------------------------------------

  void observeLeader(Ballot b) {
    lastLeaderHeard_ = nowMs();
    if (b > leaderBallot_) {
      leaderBallot_ = b;
      if (amLeader_ && b.node != myIndex_) abdicate();
      announceLeader();
    }
  }

  void observeLeaderNode(uint16_t node) {
    if (node == leaderBallot_.node) lastLeaderHeard_ = nowMs();
  }

  void abdicate() {
    amLeader_ = false;
    preparing_ = false;
    // Re-route anything we were still driving through the new leader.
    for (auto& [slot, op] : inflight_) queue_.push_back(op);
    inflight_.clear();
    std::deque<Op> pending = std::move(queue_);
    queue_.clear();
    for (Op& op : pending) submit(std::move(op), id());
  }

  void announceLeader() {
    triggerNotification(
        std::make_shared<LeaderNotification>(replicas_[leaderBallot_.node], amLeader_));
  }

  void armEnforce() {
    if (enforceArmed_ || amLeader_ || preparing_) return;
    enforceArmed_ = true;
    const int64_t delay = std::uniform_int_distribution<int64_t>(0, enforceMaxDelayMs_ - 1)(rng_);
    setupTimer(std::make_shared<EnforceTimer>(), delay);
  }

  void onEnforce() {
    enforceArmed_ = false;
    if (amLeader_ || preparing_) return;
    if (nowMs() - lastLeaderHeard_ < leaderTimeoutMs_) return;  // leader recovered
    preparing_ = true;
    prepareBallot_ = Ballot{promised_.round + 1, myIndex_};
    prepareOks_.clear();
    broadcast(std::make_shared<PrepareMsg>(myIndex_, prepareBallot_, executeNext_), true);
  }

  void onPrepareOk(const PrepareOkMsg& m) {
    if (!preparing_ || m.ballot != prepareBallot_) return;
    prepareOks_.erase(m.node);
    prepareOks_.emplace(m.node, m);
    maxExecuteHint_ = std::max(maxExecuteHint_, m.executeNext);
    if (prepareOks_.size() < quorum()) return;

    preparing_ = false;
    leaderBallot_ = prepareBallot_;
    amLeader_ = true;
    lastLeaderHeard_ = nowMs();

    // Adopt the highest-ballot accepted value per undecided slot, then fill
    // any gaps below the highest adopted slot with no-ops.
    std::map<uint64_t, std::pair<Ballot, Op>> merged;
    for (const auto& [node, ok] : prepareOks_) {
      for (const auto& [slot, entry] : ok.accepted) {
        auto it = merged.find(slot);
        if (it == merged.end() || entry.first > it->second.first) merged[slot] = entry;
      }
    }
    uint64_t top = std::max(maxExecuteHint_, executeNext_);
    for (const auto& [slot, entry] : merged) top = std::max(top, slot + 1);
    nextSlot_ = std::max(nextSlot_, top);

    inflight_.clear();
    for (uint64_t s = executeNext_; s < top; ++s) {
      if (decided_.count(s)) continue;
      auto it = merged.find(s);
      propose(s, it != merged.end() ? it->second.second : Op{});
    }
    announceLeader();
    pump();
    if (inflight_.empty() && queue_.empty()) propose(nextSlot_++, Op{});  // assert leadership
  }

  // ---- timers ---------------------------------------------------------------

  void onSuspectTick() {
    if (amLeader_) {
      if (inflight_.empty() && queue_.empty()) {
        propose(nextSlot_++, Op{});  // idle heartbeat through the log
      } else {
        for (const auto& [slot, op] : inflight_)
          broadcast(std::make_shared<AcceptMsg>(myIndex_, leaderBallot_, slot, op), true);
      }
      return;
    }
    if (preparing_) {
      broadcast(std::make_shared<PrepareMsg>(myIndex_, prepareBallot_, executeNext_), true);
      return;
    }
    if (nowMs() - lastLeaderHeard_ > leaderTimeoutMs_) armEnforce();
  }

  void onReconnectTick() {
    for (uint16_t i = 0; i < replicas_.size(); ++i) {
      if (i == myIndex_) continue;
      if (!up_.count(replicas_[i])) openConnection(replicas_[i], channel_);
    }
  }

  // ---- state ----------------------------------------------------------------

  Host self_;
  std::vector<Host> replicas_;
  uint16_t myIndex_ = 0;
  Variant variant_ = Variant::Classic;
  size_t window_ = 16;
  int64_t suspectPeriodMs_ = 1000;
  int64_t reconnectPeriodMs_ = 500;
  int64_t leaderTimeoutMs_ = 2000;
  int64_t enforceMaxDelayMs_ = 500;
  ChannelId channel_ = -1;
  std::mt19937_64 rng_;

  Ballot promised_{};             // acceptor promise
  Ballot leaderBallot_{};         // regime we believe is active
  bool amLeader_ = false;
  bool preparing_ = false;
  bool enforceArmed_ = false;
  Ballot prepareBallot_{};
  std::map<uint16_t, PrepareOkMsg> prepareOks_;
  uint64_t maxExecuteHint_ = 0;

  std::map<uint64_t, std::pair<Ballot, Op>> accepted_;
  std::map<uint64_t, std::map<Ballot, std::set<uint16_t>>> acks_;
  std::map<uint64_t, Op> decided_;
  uint64_t executeNext_ = 0;
  uint64_t nextSlot_ = 0;
  std::map<uint64_t, Op> inflight_;
  std::deque<Op> queue_;
  std::map<uint16_t, int64_t> lastRepairMs_;
  std::map<uint16_t, uint64_t> peerExecuteNext_;
  int64_t logRetain_ = -1;
  int64_t lastLeaderHeard_ = 0;

  std::set<Host> up_;
};

}  // namespace protokit::smr
