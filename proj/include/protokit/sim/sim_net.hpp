#pragma once

#include <map>
#include <memory>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "protokit/accrual.hpp"
#include "protokit/runtime.hpp"

namespace protokit::sim {

struct NetConfig {
  uint64_t seed = 1;
  double meanLatencyMs = 50.0;  // per-pair constant latency ~ U[0.2m, 1.8m]
  double dropProb = 0.0;
  double dupProb = 0.0;
};

class Simulation;

// In-process channel backend. Frames travel through the owning Simulation
// under the shared virtual clock; the "accrual" channel name additionally
// runs heartbeat + suspicion sweeps against the same monitor the TCP
// backend uses.
class SimChannel : public ChannelBackend {
 public:
  SimChannel(Simulation* net, Host self, bool accrualEnabled, accrual::Config cfg)
      : net_(net), self_(self), accrual_(accrualEnabled), monitor_(cfg) {}

  void start() override;
  void stop() override {}
  void openConnection(const Host& peer) override;
  void closeConnection(const Host& peer) override;
  void sendFrame(WireFrame frame, const Host& peer, Connection sel) override;

  const Host& self() const { return self_; }

  double phiOf(const Host& peer) { return monitor_.phiOf(peer, rt_->nowMs()); }

 private:
  friend class Simulation;

  // Called by the Simulation when a frame arrives at this endpoint.
  void inbound(const WireFrame& frame, const Host& from) {
    if (frame.msgTypeId == WireFrame::kHeartbeatType) {
      if (accrual_) monitor_.recordHeartbeat(from, rt_->nowMs());
      return;
    }
    rt_->inboundFrame(id_, frame, from);
  }

  void event(ChannelEventKind kind, const Host& peer, const std::string& cause = "",
             double phi = 0.0) {
    ChannelEvent ev;
    ev.kind = kind;
    ev.peer = peer;
    ev.cause = cause;
    ev.phi = phi;
    rt_->emitChannelEvent(id_, ev);
  }

  void sendHeartbeats();
  void sweep() {
    for (const auto& s : monitor_.evaluate(rt_->nowMs()))
      event(ChannelEventKind::PeerSuspected, s.peer, "phi threshold crossed", s.phi);
  }

  Simulation* net_;
  Host self_;
  bool accrual_;
  accrual::Monitor monitor_;
};

// Deterministic network: a set of nodes (each a Runtime in deterministic
// mode) wired together over one Scheduler. Latency per ordered node pair is
// constant, sampled once; drops and duplications are Bernoulli draws at send
// time from a dedicated stream. Identical seeds and inputs give bit-identical
// runs; the running FNV-1a trace digest over every network action is the
// check for that.
class Simulation {
 public:
  explicit Simulation(NetConfig cfg = {})
      : cfg_(cfg), latRng_(cfg.seed * 0x9E3779B97F4A7C15ULL + 1), netRng_(cfg.seed) {
    if (cfg.dropProb < 0 || cfg.dropProb > 1 || cfg.dupProb < 0 || cfg.dupProb > 1)
      throw InvalidConfig("drop/dup probabilities must be in [0,1]");
    if (cfg.meanLatencyMs <= 0) throw InvalidConfig("mean latency must be positive");
  }

  Scheduler& scheduler() { return sched_; }
  int64_t nowMs() const { return sched_.now(); }

  Runtime& addNode(const Host& host) {
    auto [it, fresh] = nodes_.try_emplace(host);
    if (!fresh) throw InvalidConfig("duplicate sim node " + host.toString());
    Node& node = it->second;
    node.host = host;
    node.rt = std::make_unique<Runtime>(sched_);
    node.rt->setChannelFactory(
        [this, host](const std::string& name, const Properties& props, Runtime&) {
          Host self = host;
          if (props.has("address") && props.has("port"))
            self = Host(props.get("address"), uint16_t(props.getInt("port")));
          auto ch = std::make_unique<SimChannel>(this, self, name == "accrual",
                                                 accrual::Config::fromProperties(props));
          nodes_.at(self).ch = ch.get();
          return ch;
        });
    return *node.rt;
  }

  Runtime& node(const Host& host) { return *req(host).rt; }
  bool alive(const Host& host) const { return nodes_.at(host).alive; }

  // ---- execution ------------------------------------------------------------

  size_t runUntil(int64_t untilMs) {
    const size_t n = sched_.runUntil(untilMs);
    steps_ += n;
    return n;
  }

  size_t runAll(size_t maxSteps = size_t(-1)) {
    const size_t n = sched_.runAll(maxSteps);
    steps_ += n;
    return n;
  }

  size_t steps() const { return steps_; }

  // ---- faults ----------------------------------------------------------------

  // Crash-stop: the node processes nothing from now on; peers observe the
  // loss of each connection one transit latency later.
  void crash(const Host& host) {
    Node& node = req(host);
    if (!node.alive) return;
    node.alive = false;
    node.rt->halt();
    mix('C', host, host, 0, {});
    std::vector<std::pair<Host, Host>> dead;
    for (const auto& c : conns_) {
      if (c.first == host || c.second == host) dead.push_back(c);
    }
    for (const auto& c : dead) {
      conns_.erase(c);
      const Host other = c.first == host ? c.second : c.first;
      const bool otherInitiated = c.first == other;
      sched_.schedule(latency(host, other), [this, other, host, otherInitiated] {
        if (SimChannel* ch = liveChannel(other))
          ch->event(otherInitiated ? ChannelEventKind::OutConnectionDown
                                   : ChannelEventKind::InConnectionDown,
                    host, "peer crashed");
      });
    }
  }

  void crashAt(const Host& host, int64_t atMs) {
    sched_.schedule(atMs - sched_.now(), [this, host] { crash(host); });
  }

  // ---- observability -----------------------------------------------------------

  uint64_t traceDigest() const { return digest_; }

  // Line-per-event log: "<virtual ms> <tag> <from> <to> <msgType> <len>".
  // Tags: O open, X close, C crash, S send, D drop, 2 duplicate, R receive.
  void setTraceSink(std::function<void(const std::string&)> sink) {
    traceSink_ = std::move(sink);
  }
  uint64_t deliveredFrames() const { return delivered_; }
  uint64_t droppedFrames() const { return dropped_; }
  uint64_t duplicatedFrames() const { return duplicated_; }

  int64_t latency(const Host& a, const Host& b) {
    const auto key = std::make_pair(a, b);
    auto it = lat_.find(key);
    if (it != lat_.end()) return it->second;
    const double m = cfg_.meanLatencyMs;
    std::uniform_real_distribution<double> dist(0.2 * m, 1.8 * m);
    const int64_t l = std::max<int64_t>(1, int64_t(dist(latRng_) + 0.5));
    lat_.emplace(key, l);
    return l;
  }

 private:
  friend class SimChannel;

  struct Node {
    Host host;
    std::unique_ptr<Runtime> rt;
    SimChannel* ch = nullptr;
    bool alive = true;
  };

  Node& req(const Host& host) {
    auto it = nodes_.find(host);
    if (it == nodes_.end()) throw UnknownNode("no sim node at " + host.toString());
    return it->second;
  }

  SimChannel* liveChannel(const Host& host) {
    auto it = nodes_.find(host);
    if (it == nodes_.end() || !it->second.alive) return nullptr;
    return it->second.ch;
  }

  // ---- channel operations ----------------------------------------------------

  void open(const Host& from, const Host& to) {
    mix('O', from, to, 0, {});
    sched_.schedule(latency(from, to), [this, from, to] {
      SimChannel* target = liveChannel(to);
      SimChannel* origin = liveChannel(from);
      if (!target) {
        if (origin)
          origin->event(ChannelEventKind::OutConnectionFailed, to, "connect: no route to host");
        return;
      }
      if (!conns_.insert({from, to}).second) return;  // already connected
      if (origin) origin->event(ChannelEventKind::OutConnectionUp, to);
      target->event(ChannelEventKind::InConnectionUp, from);
    });
  }

  void close(const Host& from, const Host& to) {
    if (!conns_.erase({from, to})) return;
    mix('X', from, to, 0, {});
    if (SimChannel* origin = liveChannel(from))
      origin->event(ChannelEventKind::OutConnectionDown, to, "closed locally");
    sched_.schedule(latency(from, to), [this, from, to] {
      if (SimChannel* target = liveChannel(to))
        target->event(ChannelEventKind::InConnectionDown, from, "closed by peer");
    });
  }

  void send(const Host& from, const Host& to, Connection sel, WireFrame frame) {
    const bool connected =
        sel == Connection::Out ? conns_.count({from, to}) != 0 : conns_.count({to, from}) != 0;
    if (!connected) {
      // Mirror the TCP backend: a send without a connection surfaces
      // asynchronously as a connection-level failure.
      sched_.schedule(0, [this, from, to, sel] {
        if (SimChannel* origin = liveChannel(from))
          origin->event(sel == Connection::Out ? ChannelEventKind::OutConnectionFailed
                                               : ChannelEventKind::InConnectionDown,
                        to, "send: no such connection");
      });
      return;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(netRng_) < cfg_.dropProb) {
      ++dropped_;
      mix('D', from, to, frame.msgTypeId, frame.payload);
      return;
    }
    const int copies = u(netRng_) < cfg_.dupProb ? 2 : 1;
    const int64_t l = latency(from, to);
    mix('S', from, to, frame.msgTypeId, frame.payload);
    for (int i = 0; i < copies; ++i) {
      if (i > 0) {
        ++duplicated_;
        mix('2', from, to, frame.msgTypeId, {});
      }
      sched_.schedule(l, [this, from, to, frame] {
        if (SimChannel* target = liveChannel(to)) {
          ++delivered_;
          mix('R', from, to, frame.msgTypeId, frame.payload);
          target->inbound(frame, from);
        }
      });
    }
  }

  std::vector<std::pair<Host, Connection>> peersOf(const Host& self) const {
    std::vector<std::pair<Host, Connection>> out;
    for (const auto& [a, b] : conns_) {
      if (a == self) out.emplace_back(b, Connection::Out);
      if (b == self) out.emplace_back(a, Connection::In);
    }
    return out;
  }

  // ---- trace digest -----------------------------------------------------------

  void mixBytes(const void* data, size_t len) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; ++i) {
      digest_ ^= p[i];
      digest_ *= 0x100000001B3ULL;
    }
  }

  void mix(char tag, const Host& a, const Host& b, uint16_t typeId,
           const std::vector<uint8_t>& payload) {
    if (traceSink_) {
      char line[160];
      std::snprintf(line, sizeof(line), "%lld %c %s %s %u %zu",
                    static_cast<long long>(sched_.now()), tag, a.toString().c_str(),
                    b.toString().c_str(), unsigned(typeId), payload.size());
      traceSink_(line);
    }
    const int64_t t = sched_.now();
    mixBytes(&t, sizeof(t));
    mixBytes(&tag, 1);
    const uint64_t ha = (uint64_t(a.address) << 16) | a.port;
    const uint64_t hb = (uint64_t(b.address) << 16) | b.port;
    mixBytes(&ha, sizeof(ha));
    mixBytes(&hb, sizeof(hb));
    mixBytes(&typeId, sizeof(typeId));
    mixBytes(payload.data(), payload.size());
  }

  NetConfig cfg_;
  std::function<void(const std::string&)> traceSink_;
  Scheduler sched_;
  std::map<Host, Node> nodes_;
  std::set<std::pair<Host, Host>> conns_;  // (initiator, target)
  std::map<std::pair<Host, Host>, int64_t> lat_;
  std::mt19937_64 latRng_;
  std::mt19937_64 netRng_;
  uint64_t digest_ = 0xCBF29CE484222325ULL;
  uint64_t delivered_ = 0;
  uint64_t dropped_ = 0;
  uint64_t duplicated_ = 0;
  size_t steps_ = 0;
};

// ---- SimChannel bodies (need the complete Simulation type) ------------------

inline void SimChannel::start() {
  if (!accrual_) return;
  const auto& cfg = monitor_.config();
  rt_->timers().scheduleTask([this] { sendHeartbeats(); }, cfg.hbPeriodMs, cfg.hbPeriodMs);
  rt_->timers().scheduleTask([this] { sweep(); }, cfg.evalPeriodMs, cfg.evalPeriodMs);
}

inline void SimChannel::openConnection(const Host& peer) { net_->open(self_, peer); }
inline void SimChannel::closeConnection(const Host& peer) { net_->close(self_, peer); }

inline void SimChannel::sendFrame(WireFrame frame, const Host& peer, Connection sel) {
  net_->send(self_, peer, sel, std::move(frame));
}

inline void SimChannel::sendHeartbeats() {
  WireFrame hb;
  hb.msgTypeId = WireFrame::kHeartbeatType;
  for (const auto& [peer, sel] : net_->peersOf(self_)) net_->send(self_, peer, sel, hb);
}

}  // namespace protokit::sim
