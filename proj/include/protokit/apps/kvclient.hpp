#pragma once

#include <chrono>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "protokit/apps/kvstore.hpp"

namespace protokit::kv {

// One closed-loop workload worker: it keeps exactly one operation in flight
// against a fixed server, so N workers model N concurrent clients. Each
// worker is its own protocol (own queue, own connection identity); run
// several in one runtime to sweep client concurrency.
class KVClient : public Protocol {
 public:
  static constexpr ProtocolId kBaseId = 700;
  static constexpr uint16_t kRetryTimer = 710;

  struct Options {
    Host server;
    double readRatio = 0.5;
    int keySpace = 1000;
    int valueBytes = 1024;
    uint64_t seed = 1;
    int64_t retryMs = 5000;
  };

  struct Sample {
    int64_t sentAtMs;   // steady-clock ms at send
    double latencyMs;
    bool read;
  };

  struct RetryTimer : ProtoTimer {
    RetryTimer() : ProtoTimer(kRetryTimer) {}
  };

  KVClient(int index, Options opts)
      : Protocol("KVClient-" + std::to_string(index), ProtocolId(kBaseId + index)),
        opts_(opts),
        rng_(opts.seed * 0x9E3779B97F4A7C15ULL + uint64_t(index) + 1),
        clientId_((opts.seed << 20) ^ uint64_t(kBaseId + index)) {}

  void init(const Properties& props) override {
    channel_ = createChannel(props.get("kv.client_channel", "tcp-client"), {});
    // Workers in one runtime share the channel; only the first registration
    // of each serializer sticks, the rest are identical duplicates.
    try {
      registerMessageSerializer<ClientRequestMsg>(channel_, kClientRequest,
                                                  clientRequestSerializer());
    } catch (const DuplicateSerializer&) {
    }
    try {
      registerMessageSerializer<ClientReplyMsg>(channel_, kClientReply, clientReplySerializer());
    } catch (const DuplicateSerializer&) {
    }
    registerMessageHandler<ClientReplyMsg>(
        channel_, kClientReply,
        [this](const ClientReplyMsg& m, const Host&, ProtocolId, ChannelId) { onReply(m); });
    registerChannelEventHandler(channel_, ChannelEventKind::OutConnectionUp,
                                [this](const ChannelEvent& ev, ChannelId) {
                                  if (ev.peer != opts_.server || connected_) return;
                                  connected_ = true;
                                  if (inflight_)
                                    sendMessage(inflight_, opts_.server, channel_,
                                                Connection::Out, KVStore::kId);
                                  else
                                    nextOp();
                                });
    registerChannelEventHandler(channel_, ChannelEventKind::OutConnectionDown,
                                [this](const ChannelEvent& ev, ChannelId) { onDisconnect(ev); });
    registerChannelEventHandler(channel_, ChannelEventKind::OutConnectionFailed,
                                [this](const ChannelEvent& ev, ChannelId) { onDisconnect(ev); });
    registerTimerHandler<RetryTimer>(kRetryTimer, [this](RetryTimer&, TimerId) { onRetry(); });
    setupPeriodicTimer(std::make_shared<RetryTimer>(), opts_.retryMs, opts_.retryMs);
    openConnection(opts_.server, channel_);
  }

  const std::vector<Sample>& samples() const { return samples_; }
  uint64_t completedOps() const { return samples_.size(); }
  uint64_t retries() const { return retries_; }

 private:
  static int64_t steadyMs() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }
  static double steadyUs() {
    return double(std::chrono::duration_cast<std::chrono::microseconds>(
                      std::chrono::steady_clock::now().time_since_epoch())
                      .count());
  }

  void nextOp() {
    ++seq_;
    const bool read = std::uniform_real_distribution<double>(0, 1)(rng_) < opts_.readRatio;
    const int key = std::uniform_int_distribution<int>(0, opts_.keySpace - 1)(rng_);
    std::vector<uint8_t> value;
    if (!read) {
      value.resize(size_t(opts_.valueBytes));
      for (auto& b : value) b = uint8_t(rng_());
    }
    inflight_ = std::make_shared<ClientRequestMsg>(clientId_, seq_, read ? OpKind::Get : OpKind::Put,
                                                   "k" + std::to_string(key), std::move(value));
    inflightRead_ = read;
    sentAtUs_ = steadyUs();
    sentAtMs_ = steadyMs();
    sendMessage(inflight_, opts_.server, channel_, Connection::Out, KVStore::kId);
  }

  void onReply(const ClientReplyMsg& m) {
    if (m.clientId != clientId_ || m.seq != seq_ || !inflight_) return;  // stale retry echo
    samples_.push_back({sentAtMs_, (steadyUs() - sentAtUs_) / 1000.0, inflightRead_});
    inflight_.reset();
    nextOp();
  }

  // At-least-once: puts are idempotent and gets are harmless to repeat, so a
  // lost request or reply is fixed by resending the same sequence number.
  void onRetry() {
    if (!inflight_ || !connected_) return;
    ++retries_;
    sendMessage(inflight_, opts_.server, channel_, Connection::Out, KVStore::kId);
  }

  void onDisconnect(const ChannelEvent& ev) {
    if (ev.peer != opts_.server) return;
    connected_ = false;
    openConnection(opts_.server, channel_);
  }

  Options opts_;
  std::mt19937_64 rng_;
  uint64_t clientId_;
  ChannelId channel_ = -1;
  bool connected_ = false;
  uint64_t seq_ = 0;
  std::shared_ptr<ClientRequestMsg> inflight_;
  bool inflightRead_ = false;
  double sentAtUs_ = 0;
  int64_t sentAtMs_ = 0;
  uint64_t retries_ = 0;
  std::vector<Sample> samples_;
};

}  // namespace protokit::kv
