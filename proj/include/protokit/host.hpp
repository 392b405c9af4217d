#pragma once

#include <arpa/inet.h>

#include <compare>
#include <cstdint>
#include <functional>
#include <string>

#include "protokit/errors.hpp"

namespace protokit {

// A network endpoint: IPv4 address + TCP port. Comparable and hashable so it
// can key connection and view maps; equality is (address, port) equality.
struct Host {
  uint32_t address = 0;  // host byte order
  uint16_t port = 0;

  Host() = default;
  Host(uint32_t addr, uint16_t p) : address(addr), port(p) {}
  Host(const std::string& addr, uint16_t p) : port(p) {
    in_addr a{};
    if (inet_pton(AF_INET, addr.c_str(), &a) != 1)
      throw ConfigError("invalid IPv4 address: " + addr);
    address = ntohl(a.s_addr);
  }

  auto operator<=>(const Host&) const = default;

  bool valid() const { return port != 0 || address != 0; }

  std::string addressString() const {
    in_addr a{};
    a.s_addr = htonl(address);
    char buf[INET_ADDRSTRLEN] = {0};
    inet_ntop(AF_INET, &a, buf, sizeof(buf));
    return buf;
  }

  std::string toString() const { return addressString() + ":" + std::to_string(port); }

  static Host parse(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ConfigError("expected host:port, got " + text);
    const int port = std::stoi(text.substr(colon + 1));
    if (port <= 0 || port > 65535) throw ConfigError("port out of range in " + text);
    return Host(text.substr(0, colon), static_cast<uint16_t>(port));
  }
};

}  // namespace protokit

template <>
struct std::hash<protokit::Host> {
  size_t operator()(const protokit::Host& h) const noexcept {
    return std::hash<uint64_t>()((uint64_t(h.address) << 16) | h.port);
  }
};
