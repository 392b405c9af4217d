#pragma once

#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "protokit/accrual.hpp"
#include "protokit/channel.hpp"
#include "protokit/errors.hpp"
#include "protokit/log.hpp"
#include "protokit/runtime.hpp"

namespace protokit {

// TCP channel backend. One length-prefixed WireFrame stream per connection,
// no handshake beyond TCP itself. Variants:
//   tcp        - connects and accepts
//   tcp-server - only accepts (openConnection is unsupported)
//   tcp-client - only connects (no listen socket)
// Each connection runs a reader thread and a writer thread; sends enqueue and
// never block on network progress.
class TcpChannel : public ChannelBackend {
 public:
  enum class Variant { Full, ServerOnly, ClientOnly };

  TcpChannel(Variant variant, const Properties& props) : variant_(variant) {
    if (variant_ != Variant::ClientOnly) {
      listenHost_ = Host(props.get("address"), uint16_t(props.getInt("port")));
    }
    maxClients_ = int(props.getInt("max_clients", 0));  // 0 = unlimited
    connectTimeoutMs_ = int(props.getInt("connect_timeout_ms", 5000));
  }

  ~TcpChannel() override { stop(); }

  void start() override {
    if (variant_ == Variant::ClientOnly) return;
    listenFd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listenFd_ < 0) throw BindFailure("socket(): " + std::string(strerror(errno)));
    int one = 1;
    ::setsockopt(listenFd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(listenHost_.address);
    addr.sin_port = htons(listenHost_.port);
    if (::bind(listenFd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listenFd_, 128) != 0) {
      const std::string err = strerror(errno);
      ::close(listenFd_);
      listenFd_ = -1;
      throw BindFailure("cannot listen on " + listenHost_.toString() + ": " + err);
    }
    spawn([this] { acceptLoop(); });
  }

  void stop() override {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) {
      awaitThreads();
      return;
    }
    if (listenFd_ >= 0) ::shutdown(listenFd_, SHUT_RDWR);
    std::vector<std::shared_ptr<Conn>> conns;
    {
      std::lock_guard lock(mu_);
      for (auto& [h, c] : out_) conns.push_back(c);
      for (auto& [h, c] : in_) conns.push_back(c);
    }
    for (auto& c : conns) teardown(c, false);
    awaitThreads();
    if (listenFd_ >= 0) {
      ::close(listenFd_);
      listenFd_ = -1;
    }
  }

  void openConnection(const Host& peer) override {
    if (variant_ == Variant::ServerOnly)
      throw OperationUnsupported("tcp-server channels only accept connections");
    {
      std::lock_guard lock(mu_);
      if (out_.count(peer) || connecting_.count(peer)) return;
      connecting_.insert(peer);
    }
    spawn([this, peer] { connectTo(peer); });
  }

  void closeConnection(const Host& peer) override {
    std::shared_ptr<Conn> conn;
    {
      std::lock_guard lock(mu_);
      auto it = out_.find(peer);
      if (it == out_.end()) return;  // idempotent: no connection, no event
      conn = it->second;
    }
    // Graceful: frames already queued still go out; the writer tears the
    // connection down once the queue drains.
    {
      std::lock_guard lock(conn->mu);
      if (!conn->closed && !conn->outq.empty()) {
        conn->drainClose = true;
        conn->cv.notify_all();
        return;
      }
    }
    teardown(conn, true);
  }

  void sendFrame(WireFrame frame, const Host& peer, Connection sel) override {
    std::shared_ptr<Conn> conn;
    {
      std::lock_guard lock(mu_);
      auto& map = sel == Connection::Out ? out_ : in_;
      auto it = map.find(peer);
      if (it != map.end()) conn = it->second;
    }
    if (!conn) {
      // Reported asynchronously, like any other connection trouble.
      ChannelEvent ev;
      ev.kind = sel == Connection::Out ? ChannelEventKind::OutConnectionFailed
                                       : ChannelEventKind::InConnectionDown;
      ev.peer = peer;
      ev.cause = "send: no such connection";
      rt_->emitChannelEvent(id_, ev);
      return;
    }
    enqueue(conn, frame.encode());
  }

 protected:
  // Accrual hooks.
  virtual void onPeerUp(const Host&) {}
  virtual void onPeerDown(const Host&) {}
  virtual bool interceptInbound(const WireFrame&, const Host&) { return false; }

  void sendRaw(const Host& peer, Connection sel, std::vector<uint8_t> bytes) {
    std::shared_ptr<Conn> conn;
    {
      std::lock_guard lock(mu_);
      auto& map = sel == Connection::Out ? out_ : in_;
      auto it = map.find(peer);
      if (it != map.end()) conn = it->second;
    }
    if (conn) enqueue(conn, std::move(bytes));
  }

  // Snapshot of live peers per direction, for heartbeat fan-out.
  std::vector<std::pair<Host, Connection>> livePeers() {
    std::vector<std::pair<Host, Connection>> peers;
    std::lock_guard lock(mu_);
    for (auto& [h, c] : out_) peers.emplace_back(h, Connection::Out);
    for (auto& [h, c] : in_) peers.emplace_back(h, Connection::In);
    return peers;
  }

 private:
  struct Conn {
    int fd = -1;
    Host peer;
    Connection dir = Connection::Out;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::vector<uint8_t>> outq;
    bool closed = false;
    bool drainClose = false;  // close once outq empties
    // The fd may only be closed after both the reader and the writer are
    // done with it; closing earlier lets the kernel recycle the number while
    // the other loop is mid-syscall, splicing bytes into an unrelated socket.
    std::atomic<int> ioUsers{2};
  };

  void releaseFd(const std::shared_ptr<Conn>& conn) {
    if (conn->ioUsers.fetch_sub(1) == 1) ::close(conn->fd);
  }

  void spawn(std::function<void()> fn) {
    {
      std::lock_guard lock(threadsMu_);
      ++activeThreads_;
    }
    std::thread([this, fn = std::move(fn)] {
      fn();
      {
        std::lock_guard lock(threadsMu_);
        --activeThreads_;
      }
      threadsCv_.notify_all();
    }).detach();
  }

  void awaitThreads() {
    std::unique_lock lock(threadsMu_);
    threadsCv_.wait(lock, [this] { return activeThreads_ == 0; });
  }

  void acceptLoop() {
    while (!stopping_) {
      sockaddr_in addr{};
      socklen_t len = sizeof(addr);
      int fd = ::accept(listenFd_, reinterpret_cast<sockaddr*>(&addr), &len);
      if (fd < 0) {
        if (stopping_) break;
        continue;
      }
      const Host peer(ntohl(addr.sin_addr.s_addr), ntohs(addr.sin_port));
      auto conn = std::make_shared<Conn>();
      conn->fd = fd;
      conn->peer = peer;
      conn->dir = Connection::In;
      {
        std::lock_guard lock(mu_);
        // A registration racing past stop()'s teardown sweep would leave its
        // io loops with nobody to stop them; the sweep snapshots under this
        // same lock, so checking here closes the window.
        if (stopping_ || (maxClients_ > 0 && int(in_.size()) >= maxClients_)) {
          ::close(fd);
          continue;
        }
        in_[peer] = conn;
      }
      startIo(conn);
      emit(ChannelEventKind::InConnectionUp, peer, "");
      onPeerUp(peer);
    }
  }

  void connectTo(const Host& peer) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    bool ok = fd >= 0;
    std::string cause;
    if (ok) {
      // Non-blocking connect with a timeout so a black-holed peer cannot pin
      // the connector.
      int flags = ::fcntl(fd, F_GETFL, 0);
      ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_addr.s_addr = htonl(peer.address);
      addr.sin_port = htons(peer.port);
      int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
      if (rc != 0 && errno == EINPROGRESS) {
        pollfd pfd{fd, POLLOUT, 0};
        rc = ::poll(&pfd, 1, connectTimeoutMs_) == 1 ? 0 : -1;
        if (rc == 0) {
          int err = 0;
          socklen_t elen = sizeof(err);
          ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen);
          if (err != 0) {
            rc = -1;
            errno = err;
          }
        } else {
          errno = ETIMEDOUT;
        }
      }
      if (rc != 0) {
        cause = strerror(errno);
        ::close(fd);
        ok = false;
      } else {
        ::fcntl(fd, F_SETFL, flags);
      }
    } else {
      cause = strerror(errno);
    }

    if (!ok) {
      {
        std::lock_guard lock(mu_);
        connecting_.erase(peer);
      }
      emit(ChannelEventKind::OutConnectionFailed, peer, cause);
      return;
    }
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    conn->peer = peer;
    conn->dir = Connection::Out;
    {
      std::lock_guard lock(mu_);
      connecting_.erase(peer);
      // Same stop() race as in acceptLoop: don't register what the teardown
      // sweep can no longer see.
      if (stopping_) {
        ::close(fd);
        return;
      }
      out_[peer] = conn;
    }
    startIo(conn);
    emit(ChannelEventKind::OutConnectionUp, peer, "");
    onPeerUp(peer);
  }

  void startIo(std::shared_ptr<Conn> conn) {
    int one = 1;
    ::setsockopt(conn->fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    spawn([this, conn] {
      readLoop(conn);
      releaseFd(conn);
    });
    spawn([this, conn] {
      writeLoop(conn);
      releaseFd(conn);
    });
  }

  void readLoop(std::shared_ptr<Conn> conn) {
    FrameAssembler assembler;
    std::vector<uint8_t> buf(64 * 1024);
    while (true) {
      const ssize_t n = ::recv(conn->fd, buf.data(), buf.size(), 0);
      if (n <= 0) break;
      try {
        assembler.feed(std::span(buf.data(), size_t(n)));
        while (auto frame = assembler.next()) {
          if (interceptInbound(*frame, conn->peer)) continue;
          rt_->inboundFrame(id_, *frame, conn->peer);
        }
      } catch (const DecodeError& ex) {
        log::warn("tcp channel %d: %s from %s, closing connection", id_, ex.what(),
                  conn->peer.toString().c_str());
        break;
      }
    }
    teardown(conn, true);
  }

  void writeLoop(std::shared_ptr<Conn> conn) {
    while (true) {
      std::vector<uint8_t> next;
      {
        std::unique_lock lock(conn->mu);
        conn->cv.wait(lock, [&] { return conn->closed || !conn->outq.empty(); });
        if (conn->closed) return;
        next = std::move(conn->outq.front());
        conn->outq.pop_front();
        if (conn->drainClose && conn->outq.empty()) {
          lock.unlock();
          sendAll(conn, next);
          teardown(conn, true);
          return;
        }
      }
      if (!sendAll(conn, next)) {
        teardown(conn, true);
        return;
      }
    }
  }

  bool sendAll(const std::shared_ptr<Conn>& conn, const std::vector<uint8_t>& bytes) {
    size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t n = ::send(conn->fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) return false;
      sent += size_t(n);
    }
    return true;
  }

  void enqueue(const std::shared_ptr<Conn>& conn, std::vector<uint8_t> bytes) {
    {
      std::lock_guard lock(conn->mu);
      if (conn->closed || conn->drainClose) return;
      conn->outq.push_back(std::move(bytes));
    }
    conn->cv.notify_one();
  }

  void teardown(const std::shared_ptr<Conn>& conn, bool emitEvent) {
    {
      std::lock_guard lock(conn->mu);
      if (conn->closed) return;
      conn->closed = true;
    }
    conn->cv.notify_all();
    ::shutdown(conn->fd, SHUT_RDWR);
    bool wasRegistered = false;
    {
      std::lock_guard lock(mu_);
      auto& map = conn->dir == Connection::Out ? out_ : in_;
      auto it = map.find(conn->peer);
      if (it != map.end() && it->second == conn) {
        map.erase(it);
        wasRegistered = true;
      }
    }
    if (wasRegistered && emitEvent && !stopping_) {
      emit(conn->dir == Connection::Out ? ChannelEventKind::OutConnectionDown
                                        : ChannelEventKind::InConnectionDown,
           conn->peer, "");
      onPeerDown(conn->peer);
    }
  }

  void emit(ChannelEventKind kind, const Host& peer, const std::string& cause) {
    if (stopping_) return;
    ChannelEvent ev;
    ev.kind = kind;
    ev.peer = peer;
    ev.cause = cause;
    rt_->emitChannelEvent(id_, ev);
  }

  Variant variant_;
  Host listenHost_;
  int maxClients_ = 0;
  int connectTimeoutMs_ = 5000;
  int listenFd_ = -1;

  std::mutex mu_;
  std::map<Host, std::shared_ptr<Conn>> out_;
  std::map<Host, std::shared_ptr<Conn>> in_;
  std::set<Host> connecting_;

  std::mutex threadsMu_;
  std::condition_variable threadsCv_;
  int activeThreads_ = 0;
  std::atomic<bool> stopping_{false};
};

// TCP channel with the phi-accrual failure detector layered on: every live
// connection carries periodic heartbeat frames (msg type 0xFFFF) injected
// below the serializer layer, and a sweep task emits PeerSuspected channel
// events on upward threshold crossings.
class AccrualTcpChannel : public TcpChannel {
 public:
  AccrualTcpChannel(const Properties& props)
      : TcpChannel(Variant::Full, props), monitor_(accrual::Config::fromProperties(props)) {}

  ~AccrualTcpChannel() override { stopTasks(); }

  void start() override {
    TcpChannel::start();
    const auto& cfg = monitor_.config();
    hbTask_ = rt_->timers().scheduleTask([this] { sendHeartbeats(); }, cfg.hbPeriodMs,
                                         cfg.hbPeriodMs);
    evalTask_ = rt_->timers().scheduleTask([this] { sweep(); }, cfg.evalPeriodMs,
                                           cfg.evalPeriodMs);
  }

  void stop() override {
    stopTasks();
    TcpChannel::stop();
  }

  double phiOf(const Host& peer) {
    std::lock_guard lock(monMu_);
    return monitor_.phiOf(peer, rt_->nowMs());
  }

 protected:
  bool interceptInbound(const WireFrame& frame, const Host& from) override {
    if (frame.msgTypeId != WireFrame::kHeartbeatType) return false;
    std::lock_guard lock(monMu_);
    monitor_.recordHeartbeat(from, rt_->nowMs());
    return true;
  }

  void onPeerDown(const Host& peer) override {
    std::lock_guard lock(monMu_);
    monitor_.forget(peer);
  }

 private:
  void sendHeartbeats() {
    WireFrame hb;
    hb.msgTypeId = WireFrame::kHeartbeatType;
    const auto bytes = hb.encode();
    for (auto& [peer, dir] : livePeers()) sendRaw(peer, dir, bytes);
  }

  void sweep() {
    std::vector<accrual::Suspicion> suspicions;
    {
      std::lock_guard lock(monMu_);
      suspicions = monitor_.evaluate(rt_->nowMs());
    }
    for (const auto& s : suspicions) {
      ChannelEvent ev;
      ev.kind = ChannelEventKind::PeerSuspected;
      ev.peer = s.peer;
      ev.phi = s.phi;
      rt_->emitChannelEvent(channelId(), ev);
    }
  }

  void stopTasks() {
    if (hbTask_) rt_->timers().cancel(hbTask_);
    if (evalTask_) rt_->timers().cancel(evalTask_);
    hbTask_ = evalTask_ = 0;
  }

  std::mutex monMu_;
  accrual::Monitor monitor_;
  TimerId hbTask_ = 0;
  TimerId evalTask_ = 0;
};

namespace detail {
inline const bool tcpRegistered = [] {
  registerChannelType("tcp", [](const std::string&, const Properties& p, Runtime&) {
    return std::make_unique<TcpChannel>(TcpChannel::Variant::Full, p);
  });
  registerChannelType("tcp-server", [](const std::string&, const Properties& p, Runtime&) {
    return std::make_unique<TcpChannel>(TcpChannel::Variant::ServerOnly, p);
  });
  registerChannelType("tcp-client", [](const std::string&, const Properties& p, Runtime&) {
    return std::make_unique<TcpChannel>(TcpChannel::Variant::ClientOnly, p);
  });
  registerChannelType("accrual", [](const std::string&, const Properties& p, Runtime&) {
    return std::make_unique<AccrualTcpChannel>(p);
  });
  return true;
}();
}  // namespace detail

}  // namespace protokit
