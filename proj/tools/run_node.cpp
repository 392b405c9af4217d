// run-node: boot one real node over TCP with a chosen protocol stack and run
// until SIGINT/SIGTERM. Stacks:
//   p2p         - membership (HyParView) + flood dissemination
//   smr-replica - consensus (MultiPaxos) + replicated key/value store
#include <csignal>
#include <iostream>
#include <memory>
#include <semaphore>

#include <CLI11.hpp>

#include "protokit/apps/kvstore.hpp"
#include "protokit/protocols/flood.hpp"
#include "protokit/tcp_channel.hpp"

using namespace protokit;

namespace {

std::binary_semaphore shutdownSignal(0);

void onSignal(int) { shutdownSignal.release(); }

void requireKeys(const Properties& props, std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    if (!props.has(key)) throw ConfigError(key);
  }
}

// Probe the listen address before booting: protocol init runs on protocol
// threads where a bind failure would be contained and only logged.
void checkBindable(const Host& host) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw BindFailure("socket(): " + std::string(strerror(errno)));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(host.address);
  addr.sin_port = htons(host.port);
  const bool ok = ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0;
  const std::string err = ok ? "" : strerror(errno);
  ::close(fd);
  if (!ok) throw BindFailure("cannot bind " + host.toString() + ": " + err);
}

// Periodically reports node state so an operator can see progress.
class StatusReporter : public Protocol {
 public:
  explicit StatusReporter(std::string stack)
      : Protocol("StatusReporter", 32000), stack_(std::move(stack)) {}

  struct Tick : ProtoTimer {
    Tick() : ProtoTimer(1) {}
  };

  void init(const Properties&) override {
    if (stack_ == "p2p") {
      subscribeNotification<p2p::HyParView::NeighborUp>(
          p2p::HyParView::kNeighborUp, [](const p2p::HyParView::NeighborUp& n, ProtocolId) {
            std::cout << "neighbor up: " << n.peer.toString() << std::endl;
          });
      subscribeNotification<p2p::HyParView::NeighborDown>(
          p2p::HyParView::kNeighborDown, [](const p2p::HyParView::NeighborDown& n, ProtocolId) {
            std::cout << "neighbor down: " << n.peer.toString() << std::endl;
          });
      subscribeNotification<p2p::Flood::DeliverNotification>(
          p2p::Flood::kDeliverNotification,
          [](const p2p::Flood::DeliverNotification& n, ProtocolId) {
            std::cout << "delivered msg " << n.msgId << " from " << n.origin.toString()
                      << " (" << n.payload.size() << " bytes)" << std::endl;
          });
    } else {
      subscribeNotification<smr::MultiPaxos::LeaderNotification>(
          smr::MultiPaxos::kLeaderNotification,
          [](const smr::MultiPaxos::LeaderNotification& n, ProtocolId) {
            std::cout << "leader: " << n.leader.toString() << (n.self ? " (this node)" : "")
                      << std::endl;
          });
    }
  }

 private:
  std::string stack_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"boot a node with a protocol stack"};
  std::string stack;
  std::string configPath;
  app.add_option("stack", stack, "protocol stack")
      ->required()
      ->check(CLI::IsMember({"p2p", "smr-replica"}));
  app.add_option("--config", configPath, "key=value properties file")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;  // bad flags are a config error
  }

  try {
    const Properties props = Properties::fromFile(configPath);
    requireKeys(props, {"address", "port"});
    if (stack == "smr-replica") requireKeys(props, {"smr.replicas"});
    checkBindable(Host(props.get("address"), uint16_t(props.getInt("port"))));

    Runtime rt;
    std::unique_ptr<p2p::HyParView> membership;
    std::unique_ptr<p2p::Flood> flood;
    std::unique_ptr<smr::MultiPaxos> paxos;
    std::unique_ptr<kv::KVStore> store;
    StatusReporter reporter(stack);
    if (stack == "p2p") {
      membership = std::make_unique<p2p::HyParView>();
      flood = std::make_unique<p2p::Flood>();
      rt.registerProtocol(membership.get());
      rt.registerProtocol(flood.get());
    } else {
      paxos = std::make_unique<smr::MultiPaxos>();
      store = std::make_unique<kv::KVStore>();
      rt.registerProtocol(paxos.get());
      rt.registerProtocol(store.get());
    }
    rt.registerProtocol(&reporter);

    std::signal(SIGINT, onSignal);
    std::signal(SIGTERM, onSignal);
    rt.start(props);
    std::cout << "node up at " << props.get("address") << ":" << props.get("port") << " ["
              << stack << "]" << std::endl;
    shutdownSignal.acquire();
    std::cout << "shutting down" << std::endl;
    rt.stop();
    if (store) std::cout << "state digest: " << store->digest() << std::endl;
    return 0;
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << std::endl;
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << std::endl;
    return 1;
  }
}
