#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <vector>

#include "protokit/event.hpp"
#include "protokit/host.hpp"
#include "protokit/properties.hpp"

namespace protokit::accrual {

struct Config {
  size_t windowSize = 100;
  double sigmaMinMs = 1.0;
  int64_t hbPeriodMs = 500;
  double phiThreshold = 8.0;
  int64_t evalPeriodMs = 100;

  static Config fromProperties(const Properties& p) {
    Config c;
    c.windowSize = size_t(p.getInt("window_size", int64_t(c.windowSize)));
    c.hbPeriodMs = p.getInt("hb_period_ms", c.hbPeriodMs);
    c.phiThreshold = p.getDouble("phi_threshold", c.phiThreshold);
    c.evalPeriodMs = p.getInt("eval_period_ms", c.evalPeriodMs);
    c.sigmaMinMs = p.getDouble("sigma_min_ms", c.sigmaMinMs);
    return c;
  }
};

inline double normalCdf(double x, double mu, double sigma) {
  return 0.5 * std::erfc((mu - x) / (sigma * std::sqrt(2.0)));
}

// Suspicion level: -log10 of the probability that a heartbeat is merely late
// by `elapsedMs` or more, under a normal model of inter-arrival times.
inline double phi(double mu, double sigma, double elapsedMs) {
  const double pLater = 0.5 * std::erfc((elapsedMs - mu) / (sigma * std::sqrt(2.0)));
  if (pLater <= 0.0) return 350.0;  // erfc underflow; beyond any usable threshold
  return -std::log10(pLater);
}

// Sliding window of the last W inter-arrival intervals for one peer.
class HeartbeatWindow {
 public:
  explicit HeartbeatWindow(size_t capacity, double sigmaMinMs)
      : capacity_(capacity), sigmaMin_(sigmaMinMs) {}

  void record(int64_t nowMs) {
    if (!hasArrival_) {
      hasArrival_ = true;
      lastArrival_ = nowMs;
      return;
    }
    int64_t interval = nowMs - lastArrival_;
    if (interval < 0) interval = 0;  // non-monotonic clock: clamp
    if (intervals_.size() == capacity_) {
      sum_ -= intervals_.front();
      sumSq_ -= double(intervals_.front()) * double(intervals_.front());
      intervals_.pop_front();
    }
    intervals_.push_back(interval);
    sum_ += double(interval);
    sumSq_ += double(interval) * double(interval);
    if (nowMs > lastArrival_) lastArrival_ = nowMs;
  }

  size_t samples() const { return intervals_.size(); }
  int64_t lastArrival() const { return lastArrival_; }

  double mean() const { return intervals_.empty() ? 0.0 : sum_ / double(intervals_.size()); }

  double stddev() const {
    if (intervals_.empty()) return sigmaMin_;
    const double m = mean();
    double var = sumSq_ / double(intervals_.size()) - m * m;
    if (var < 0) var = 0;
    return std::max(std::sqrt(var), sigmaMin_);
  }

  // Insufficient data never suspects.
  double phiAt(int64_t nowMs) const {
    if (intervals_.size() < 2) return 0.0;
    return phi(mean(), stddev(), double(nowMs - lastArrival_));
  }

 private:
  size_t capacity_;
  double sigmaMin_;
  std::deque<int64_t> intervals_;
  double sum_ = 0;
  double sumSq_ = 0;
  int64_t lastArrival_ = 0;
  bool hasArrival_ = false;
};

struct Suspicion {
  Host peer;
  double phi;
  int64_t at;
};

// Per-peer windows plus edge-triggered threshold crossing detection. Thread
// safety is the caller's concern (TCP channels run it under a mutex; the
// simulator is single-threaded).
class Monitor {
 public:
  explicit Monitor(Config cfg) : cfg_(cfg) {}

  void recordHeartbeat(const Host& peer, int64_t nowMs) {
    auto [it, inserted] = peers_.try_emplace(peer, PeerState{window(), false});
    it->second.window.record(nowMs);
    if (it->second.window.phiAt(nowMs) < cfg_.phiThreshold) it->second.suspected = false;
  }

  double phiOf(const Host& peer, int64_t nowMs) const {
    auto it = peers_.find(peer);
    return it == peers_.end() ? 0.0 : it->second.window.phiAt(nowMs);
  }

  // One Suspicion per upward crossing of the threshold; re-armed when the
  // peer's phi drops back below (i.e., heartbeats resume).
  std::vector<Suspicion> evaluate(int64_t nowMs) {
    std::vector<Suspicion> out;
    for (auto& [peer, state] : peers_) {
      const double p = state.window.phiAt(nowMs);
      if (p > cfg_.phiThreshold) {
        if (!state.suspected) {
          state.suspected = true;
          out.push_back(Suspicion{peer, p, nowMs});
        }
      } else {
        state.suspected = false;
      }
    }
    return out;
  }

  void forget(const Host& peer) { peers_.erase(peer); }

  const Config& config() const { return cfg_; }

 private:
  struct PeerState {
    HeartbeatWindow window;
    bool suspected;
  };

  HeartbeatWindow window() const { return HeartbeatWindow(cfg_.windowSize, cfg_.sigmaMinMs); }

  Config cfg_;
  std::map<Host, PeerState> peers_;
};

}  // namespace protokit::accrual
