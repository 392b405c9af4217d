#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <queue>

#include "protokit/sim/harness.hpp"
#include "protokit/sim/sim_net.hpp"

using namespace protokit;
using namespace protokit::sim;

namespace {

struct SimProto : Protocol {
  SimProto(std::string name, ProtocolId id) : Protocol(std::move(name), id) {}
  std::function<void(SimProto&, const Properties&)> setup;
  void init(const Properties& p) override {
    if (setup) setup(*this, p);
  }
  using Protocol::createChannel;
  using Protocol::openConnection;
  using Protocol::registerChannelEventHandler;
  using Protocol::registerMessageHandler;
  using Protocol::registerMessageSerializer;
  using Protocol::sendMessage;
};

struct NumMsg : ProtoMessage {
  explicit NumMsg(uint32_t v) : ProtoMessage(88), value(v) {}
  uint32_t value;
};

Serializer<NumMsg> numSerializer() {
  return Serializer<NumMsg>{
      [](const NumMsg& m, ByteWriter& w) { w.putU32(m.value); },
      [](ByteReader& r) { return NumMsg(r.getU32()); },
  };
}

Properties nodeProps(const Host& h) {
  Properties p;
  p.set("address", h.addressString());
  p.set("port", std::to_string(h.port));
  return p;
}

// Sender fires `count` messages once its connection comes up; receiver counts.
struct PairHarness {
  Simulation sim;
  Host a{uint32_t(0x0A000001), 5000}, b{uint32_t(0x0A000002), 5000};
  SimProto pa{"a", 100}, pb{"b", 100};
  int received = 0;
  int downAtB = 0;

  explicit PairHarness(NetConfig cfg, int count, const std::string& channel = "tcp")
      : sim(cfg) {
    Runtime& ra = sim.addNode(a);
    Runtime& rb = sim.addNode(b);
    pa.setup = [this, count, channel](SimProto& self, const Properties& props) {
      const ChannelId ch = self.createChannel(channel, props);
      self.registerMessageSerializer<NumMsg>(ch, 88, numSerializer());
      self.registerChannelEventHandler(
          ch, ChannelEventKind::OutConnectionUp, [this, count, &self, ch](const ChannelEvent& ev, ChannelId) {
            for (int i = 0; i < count; ++i)
              self.sendMessage(std::make_shared<NumMsg>(uint32_t(i)), ev.peer, ch);
          });
      self.openConnection(b, ch);
    };
    pb.setup = [this, channel](SimProto& self, const Properties& props) {
      const ChannelId ch = self.createChannel(channel, props);
      self.registerMessageSerializer<NumMsg>(ch, 88, numSerializer());
      self.registerMessageHandler<NumMsg>(
          ch, 88, [this](const NumMsg&, const Host&, ProtocolId, ChannelId) { ++received; });
      self.registerChannelEventHandler(ch, ChannelEventKind::InConnectionDown,
                                       [this](const ChannelEvent&, ChannelId) { ++downAtB; });
    };
    ra.registerProtocol(&pa);
    rb.registerProtocol(&pb);
    ra.start(nodeProps(a));
    rb.start(nodeProps(b));
  }
};

}  // namespace

TEST_CASE("sim: configuration validation") {
  CHECK_THROWS_AS(Simulation(NetConfig{1, 50.0, -0.1, 0.0}), InvalidConfig);
  CHECK_THROWS_AS(Simulation(NetConfig{1, 50.0, 1.1, 0.0}), InvalidConfig);
  CHECK_THROWS_AS(Simulation(NetConfig{1, 50.0, 0.0, -0.5}), InvalidConfig);
  CHECK_THROWS_AS(Simulation(NetConfig{1, 50.0, 0.0, 2.0}), InvalidConfig);
  CHECK_THROWS_AS(Simulation(NetConfig{1, 0.0, 0.0, 0.0}), InvalidConfig);
  CHECK_THROWS_AS(Simulation(NetConfig{1, -3.0, 0.0, 0.0}), InvalidConfig);
  CHECK_NOTHROW(Simulation(NetConfig{1, 50.0, 1.0, 1.0}));
}

TEST_CASE("sim: pairwise latency is constant, bounded, and has the right mean") {
  NetConfig cfg;
  cfg.seed = 11;
  cfg.meanLatencyMs = 100.0;
  Simulation sim(cfg);
  std::vector<Host> hosts;
  for (int i = 0; i < 101; ++i) hosts.emplace_back(uint32_t(0x0A000001 + i), 5000);
  double sum = 0;
  int n = 0;
  for (int i = 0; i < 101; ++i) {
    for (int j = 0; j < 101; ++j) {
      if (i == j) continue;
      const int64_t l = sim.latency(hosts[size_t(i)], hosts[size_t(j)]);
      CHECK(l >= 20);
      CHECK(l <= 180);
      CHECK(sim.latency(hosts[size_t(i)], hosts[size_t(j)]) == l);  // memoized
      sum += double(l);
      ++n;
    }
  }
  CHECK(n >= 10000);
  CHECK(std::abs(sum / n - 100.0) / 100.0 < 0.05);
}

TEST_CASE("sim: lossless delivery, then full drop, then full duplication") {
  {
    PairHarness h(NetConfig{5, 30.0, 0.0, 0.0}, 100);
    h.sim.runAll();
    CHECK(h.received == 100);
    CHECK(h.sim.deliveredFrames() == 100);
    CHECK(h.sim.droppedFrames() == 0);
    CHECK(h.sim.duplicatedFrames() == 0);
  }
  {
    PairHarness h(NetConfig{5, 30.0, 1.0, 0.0}, 100);
    h.sim.runAll();
    CHECK(h.received == 0);
    CHECK(h.sim.droppedFrames() == 100);
  }
  {
    PairHarness h(NetConfig{5, 30.0, 0.0, 1.0}, 100);
    h.sim.runAll();
    // A duplicated frame arrives exactly twice, never more.
    CHECK(h.received == 200);
    CHECK(h.sim.deliveredFrames() == 200);
    CHECK(h.sim.duplicatedFrames() == 100);
  }
}

TEST_CASE("sim: identical seeds give identical traces, different seeds diverge") {
  auto digestFor = [](uint64_t seed) {
    PairHarness h(NetConfig{seed, 40.0, 0.3, 0.2}, 200);
    h.sim.runAll();
    return std::make_pair(h.sim.traceDigest(), h.sim.deliveredFrames());
  };
  const auto run1 = digestFor(1234);
  const auto run2 = digestFor(1234);
  CHECK(run1 == run2);
  CHECK(digestFor(99).first != run1.first);
}

TEST_CASE("sim: crash keeps in-flight frames but kills the node") {
  PairHarness h(NetConfig{7, 50.0, 0.0, 0.0}, 0);
  // Connect, then at t=1000 send one frame and crash the sender in the same
  // instant. The frame is already in flight, so it must still arrive; the
  // peer then observes the connection drop.
  h.sim.runUntil(500);
  h.sim.crashAt(h.a, 1200);
  // Queue a protocol-level send just before the crash.
  h.sim.scheduler().schedule(1100 - h.sim.nowMs(), [&] {
    h.sim.node(h.a).sendMessage(100, std::make_shared<NumMsg>(1), h.b, 1, Connection::Out, 100);
  });
  h.sim.runAll();
  CHECK(h.received == 1);     // in-flight frame survived the sender's crash
  CHECK(h.downAtB == 1);      // peer saw the connection die
  CHECK_FALSE(h.sim.alive(h.a));
  CHECK(h.sim.alive(h.b));

  // Sending toward a crashed node goes nowhere, silently.
  const int before = h.received;
  h.sim.node(h.b).sendMessage(100, std::make_shared<NumMsg>(2), h.a, 1, Connection::In, 100);
  h.sim.runAll();
  CHECK(h.received == before);
}

TEST_CASE("sim: failure detector suspects a crashed peer quickly") {
  NetConfig cfg;
  cfg.seed = 3;
  cfg.meanLatencyMs = 20.0;
  Simulation sim(cfg);
  const Host a(uint32_t(0x0A000001), 5000), b(uint32_t(0x0A000002), 5000);
  Runtime& ra = sim.addNode(a);
  Runtime& rb = sim.addNode(b);
  SimProto pa("a", 100), pb("b", 100);
  int64_t suspectedAt = -1;
  double suspectedPhi = 0;
  pa.setup = [&](SimProto& self, const Properties& props) {
    const ChannelId ch = self.createChannel("accrual", props);
    self.registerMessageSerializer<NumMsg>(ch, 88, numSerializer());
    self.registerChannelEventHandler(ch, ChannelEventKind::PeerSuspected,
                                     [&](const ChannelEvent& ev, ChannelId) {
                                       if (suspectedAt < 0) suspectedAt = sim.nowMs();
                                       suspectedPhi = ev.phi;
                                     });
    self.openConnection(b, ch);
  };
  pb.setup = [&](SimProto& self, const Properties& props) {
    const ChannelId ch = self.createChannel("accrual", props);
    self.registerMessageSerializer<NumMsg>(ch, 88, numSerializer());
  };
  ra.registerProtocol(&pa);
  rb.registerProtocol(&pb);
  ra.start(nodeProps(a));
  rb.start(nodeProps(b));

  const int64_t crashAt = 60000;  // 100+ heartbeats of history first
  sim.crashAt(b, crashAt);
  sim.runUntil(crashAt + 5000);
  REQUIRE(suspectedAt > 0);
  CHECK(suspectedAt > crashAt);
  CHECK(suspectedAt <= crashAt + 10 * 500);  // within ten heartbeat periods
  CHECK(suspectedPhi > 8.0);
}

TEST_CASE("overlay: views converge, stay symmetric, and respect capacity") {
  const int kNodes = 20;
  NetConfig cfg;
  cfg.seed = 17;
  cfg.meanLatencyMs = 10.0;
  Simulation sim(cfg);
  std::vector<Host> hosts;
  std::vector<std::unique_ptr<p2p::HyParView>> views;
  for (int i = 0; i < kNodes; ++i) hosts.emplace_back(uint32_t(0x0A000001 + i), 5000);
  for (int i = 0; i < kNodes; ++i) {
    Runtime& rt = sim.addNode(hosts[size_t(i)]);
    views.push_back(std::make_unique<p2p::HyParView>());
    rt.registerProtocol(views.back().get());
    Properties props = nodeProps(hosts[size_t(i)]);
    props.set("hyparview.contact", hosts[0].toString());
    props.set("hyparview.join_delay_ms", std::to_string(50 * i));
    props.set("hyparview.seed", "17");
    rt.start(props);
  }
  sim.runUntil(60000);

  std::map<Host, int> index;
  for (int i = 0; i < kNodes; ++i) index[hosts[size_t(i)]] = i;
  for (int i = 0; i < kNodes; ++i) {
    const auto& active = views[size_t(i)]->activeView();
    CHECK(active.size() >= 1);
    CHECK(active.size() <= 5);
    CHECK(views[size_t(i)]->passiveView().size() <= 30);
    CHECK(views[size_t(i)]->viewsConsistent());
    for (const Host& peer : active) {
      CHECK(index.count(peer) == 1);
      CHECK(views[size_t(index[peer])]->activeView().count(hosts[size_t(i)]) == 1);
    }
  }
  // The active-view graph is connected: a broadcast can reach everyone.
  std::set<int> seen{0};
  std::queue<int> work;
  work.push(0);
  while (!work.empty()) {
    const int cur = work.front();
    work.pop();
    for (const Host& peer : views[size_t(cur)]->activeView()) {
      const int j = index[peer];
      if (seen.insert(j).second) work.push(j);
    }
  }
  CHECK(seen.size() == size_t(kNodes));
}

TEST_CASE("broadcast: each node delivers a flooded message exactly once") {
  NetConfig cfg;
  cfg.seed = 21;
  cfg.meanLatencyMs = 10.0;
  cfg.dupProb = 0.5;  // network duplicates must be absorbed by dedup
  Simulation sim(cfg);
  const int kNodes = 3;
  std::vector<Host> hosts;
  std::vector<std::unique_ptr<p2p::HyParView>> views;
  std::vector<std::unique_ptr<p2p::Flood>> floods;
  std::vector<std::unique_ptr<DeliveryProbe>> probes;
  std::map<uint64_t, std::vector<int>> deliveries;
  for (int i = 0; i < kNodes; ++i) hosts.emplace_back(uint32_t(0x0A000001 + i), 5000);
  for (int i = 0; i < kNodes; ++i) {
    Runtime& rt = sim.addNode(hosts[size_t(i)]);
    views.push_back(std::make_unique<p2p::HyParView>());
    floods.push_back(std::make_unique<p2p::Flood>());
    probes.push_back(std::make_unique<DeliveryProbe>(
        [&deliveries, i](uint64_t id) { deliveries[id].push_back(i); }));
    rt.registerProtocol(views.back().get());
    rt.registerProtocol(floods.back().get());
    rt.registerProtocol(probes.back().get());
    Properties props = nodeProps(hosts[size_t(i)]);
    props.set("hyparview.contact", hosts[0].toString());
    props.set("hyparview.join_delay_ms", std::to_string(50 * i));
    rt.start(props);
  }
  sim.runUntil(20000);
  const std::vector<uint8_t> payload{1, 2, 3, 4};
  sim.node(hosts[0]).sendRequest(0, std::make_shared<p2p::Flood::BroadcastRequest>(payload),
                                 p2p::Flood::kId);
  sim.runUntil(30000);
  REQUIRE(deliveries.size() == 1);
  const auto& who = deliveries.begin()->second;
  CHECK(who.size() == size_t(kNodes));  // exactly once each, duplicates absorbed
  std::set<int> unique(who.begin(), who.end());
  CHECK(unique.size() == size_t(kNodes));
}

TEST_CASE("scenario: fault-free run delivers everything everywhere") {
  P2pScenario sc;
  sc.nodes = 10;
  sc.meanLatencyMs = 50.0;
  sc.msgsPerNode = 3;
  sc.msgIntervalMs = 1000;
  sc.warmupMs = 15000;
  sc.drainMs = 15000;
  sc.assertFaultFreeOne = true;
  const auto res = runP2pScenario(sc, 42);
  CHECK(res.violations.empty());
  CHECK(res.minBin == 1.0);
  REQUIRE(!res.bins.empty());
  for (const auto& b : res.bins) CHECK(b.reliability == 1.0);
  CHECK(res.aliveAtEnd == 10);

  // Same scenario, same seed: bit-identical trace and CSV.
  const auto res2 = runP2pScenario(sc, 42);
  CHECK(res2.traceDigest == res.traceDigest);
  CHECK(res2.csv() == res.csv());
  CHECK(res2.steps == res.steps);
}

TEST_CASE("scenario: key=value parsing round-trips into a scenario") {
  const auto p = Properties::fromString(
      "type=p2p\n"
      "p2p.nodes=25\n"
      "p2p.mean_latency_ms=100.5\n"
      "p2p.msgs_per_node=7\n"
      "p2p.drop_prob=0.1\n"
      "p2p.fault_fraction=0.25\n");
  const auto sc = P2pScenario::fromProperties(p);
  CHECK(sc.nodes == 25);
  CHECK(sc.meanLatencyMs == doctest::Approx(100.5));
  CHECK(sc.msgsPerNode == 7);
  CHECK(sc.dropProb == doctest::Approx(0.1));
  CHECK(sc.faultFraction == doctest::Approx(0.25));
}
