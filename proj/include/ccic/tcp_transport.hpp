#pragma once

// Length-prefixed JSON envelopes over TCP, for running nodes as separate
// services. Sockets are non-blocking and serviced from transmit()/collect(),
// so the transport fits the same tick-driven contract as the in-process one.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ccic/link.hpp"

namespace ccic::link {

struct TcpAddress {
  std::string host = "127.0.0.1";
  int port = 0;
};

class TcpTransport : public Transport {
 public:
  /// Listens on `listen.port` (0 picks a free port). Throws Error when the
  /// port is busy.
  TcpTransport(NodeId self, TcpAddress listen);
  ~TcpTransport() override;
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  void add_route(const NodeId& node, TcpAddress addr) { routes_[node] = std::move(addr); }
  int port() const { return port_; }

  /// Best effort: a failed connect or write drops the envelope and the link
  /// layer retransmits it later.
  void transmit(const Envelope& e, SimTime now) override;
  std::vector<Envelope> collect(const NodeId& node, SimTime now) override;

  std::uint64_t protocol_errors() const { return protocol_errors_; }

 private:
  struct Conn {
    int fd = -1;
    FrameDecoder decoder;
  };
  int connect_to(const NodeId& node);
  void close_out(const NodeId& node);

  NodeId self_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::map<NodeId, TcpAddress> routes_;
  std::map<NodeId, int> out_;
  std::vector<std::unique_ptr<Conn>> in_;
  std::uint64_t protocol_errors_ = 0;
};

}  // namespace ccic::link
