#pragma once

#include <algorithm>
#include <chrono>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "protokit/apps/kvclient.hpp"
#include "protokit/tcp_channel.hpp"

namespace protokit::kv {

// An in-process replica group: one runtime per replica, each hosting the
// consensus engine and the store. Useful for benchmarks and tests that want
// a real-TCP cluster without separate processes.
class LocalCluster {
 public:
  void start(const std::vector<Host>& hosts, const std::string& variant = "classic") {
    hosts_ = hosts;
    std::string list;
    for (size_t i = 0; i < hosts.size(); ++i) {
      if (i) list += ",";
      list += hosts[i].toString();
    }
    for (const Host& h : hosts) {
      auto rt = std::make_unique<Runtime>();
      auto paxos = std::make_unique<smr::MultiPaxos>();
      auto store = std::make_unique<KVStore>();
      rt->registerProtocol(paxos.get());
      rt->registerProtocol(store.get());
      Properties props;
      props.set("address", h.addressString());
      props.set("port", std::to_string(h.port));
      props.set("smr.replicas", list);
      props.set("smr.variant", variant);
      // Long benchmarks would otherwise grow the consensus log without bound.
      props.set("smr.log_retain", "4096");
      rt->start(props);
      paxos_.push_back(std::move(paxos));
      stores_.push_back(std::move(store));
      runtimes_.push_back(std::move(rt));
    }
  }

  void stop() {
    for (auto& rt : runtimes_) rt->stop();
  }

  std::vector<uint64_t> digests() const {
    std::vector<uint64_t> out;
    for (const auto& s : stores_) out.push_back(s->digest());
    return out;
  }

  std::vector<uint64_t> appliedOps() const {
    std::vector<uint64_t> out;
    for (const auto& s : stores_) out.push_back(s->appliedOps());
    return out;
  }

  const std::vector<Host>& hosts() const { return hosts_; }
  KVStore& store(size_t i) { return *stores_[i]; }
  smr::MultiPaxos& paxos(size_t i) { return *paxos_[i]; }

 private:
  std::vector<Host> hosts_;
  std::vector<std::unique_ptr<Runtime>> runtimes_;
  std::vector<std::unique_ptr<smr::MultiPaxos>> paxos_;
  std::vector<std::unique_ptr<KVStore>> stores_;
};

struct BenchOptions {
  std::vector<Host> replicas;
  int threads = 1;  // closed-loop workers, one protocol each
  double durationS = 60;
  double readRatio = 0.5;
  int keySpace = 1000;
  int valueBytes = 1024;
  uint64_t seed = 1;
  double trimFraction = 0.1;  // warm-up and cool-down share trimmed per side
};

struct BenchSummary {
  uint64_t ops = 0;
  double throughputOpsS = 0;
  double avgLatencyMs = 0;
  double p99LatencyMs = 0;
  uint64_t retries = 0;
  std::string perOpCsv;  // timestamp_ms,op,latency_us,ok

  std::string summaryCsvRow(int threads) const {
    std::ostringstream out;
    out << threads << "," << ops << "," << throughputOpsS << "," << avgLatencyMs << ","
        << p99LatencyMs << "\n";
    return out.str();
  }
  static std::string summaryCsvHeader() {
    return "threads,ops,throughput_ops_s,avg_latency_ms,p99_latency_ms\n";
  }
};

// Drives `threads` closed-loop clients against the replicas for the wall-
// clock duration, then trims warm-up/cool-down and aggregates. Workers are
// spread round-robin over the replica list.
inline BenchSummary runBench(const BenchOptions& opts) {
  Runtime rt;
  std::vector<std::unique_ptr<KVClient>> workers;
  for (int i = 0; i < opts.threads; ++i) {
    KVClient::Options co;
    co.server = opts.replicas[size_t(i) % opts.replicas.size()];
    co.readRatio = opts.readRatio;
    co.keySpace = opts.keySpace;
    co.valueBytes = opts.valueBytes;
    co.seed = opts.seed;
    workers.push_back(std::make_unique<KVClient>(i, co));
    rt.registerProtocol(workers.back().get());
  }
  BenchSummary sum;
  if (opts.durationS <= 0 || opts.threads <= 0) {
    sum.perOpCsv = "timestamp_ms,op,latency_us,ok\n";
    return sum;
  }

  const auto t0 = std::chrono::steady_clock::now();
  rt.start({});
  std::this_thread::sleep_for(std::chrono::duration<double>(opts.durationS));
  rt.stop();

  const int64_t startMs =
      std::chrono::duration_cast<std::chrono::milliseconds>(t0.time_since_epoch()).count();
  const int64_t spanMs = int64_t(opts.durationS * 1000);
  const int64_t lo = startMs + int64_t(double(spanMs) * opts.trimFraction);
  const int64_t hi = startMs + int64_t(double(spanMs) * (1.0 - opts.trimFraction));

  std::ostringstream csv;
  csv << "timestamp_ms,op,latency_us,ok\n";
  std::vector<double> lat;
  double total = 0;
  for (const auto& w : workers) {
    sum.retries += w->retries();
    for (const auto& s : w->samples()) {
      csv << s.sentAtMs << "," << (s.read ? "read" : "write") << "," << int64_t(s.latencyMs * 1000)
          << ",1\n";
      if (s.sentAtMs < lo || s.sentAtMs > hi) continue;
      lat.push_back(s.latencyMs);
      total += s.latencyMs;
    }
  }
  sum.perOpCsv = csv.str();
  sum.ops = lat.size();
  if (!lat.empty()) {
    const double windowS = double(hi - lo) / 1000.0;
    sum.throughputOpsS = double(lat.size()) / windowS;
    sum.avgLatencyMs = total / double(lat.size());
    std::sort(lat.begin(), lat.end());
    sum.p99LatencyMs = lat[std::min(lat.size() - 1, size_t(double(lat.size()) * 0.99))];
  }
  return sum;
}

}  // namespace protokit::kv
