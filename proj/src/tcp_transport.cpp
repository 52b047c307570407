#include "ccic/tcp_transport.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "ccic/log.hpp"

namespace ccic::link {

namespace {

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

sockaddr_in make_addr(const TcpAddress& a) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<std::uint16_t>(a.port));
  if (::inet_pton(AF_INET, a.host.c_str(), &sa.sin_addr) != 1) throw ConfigError("bad IPv4 address '" + a.host + "'");
  return sa;
}

}  // namespace

TcpTransport::TcpTransport(NodeId self, TcpAddress listen) : self_(std::move(self)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error("socket: " + std::string(std::strerror(errno)));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  auto sa = make_addr(listen);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw Error("cannot listen on " + listen.host + ":" + std::to_string(listen.port) + ": " + why);
  }
  socklen_t len = sizeof sa;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  port_ = ntohs(sa.sin_port);
  set_nonblocking(listen_fd_);
}

TcpTransport::~TcpTransport() {
  for (auto& [_, fd] : out_) ::close(fd);
  for (auto& c : in_) ::close(c->fd);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

int TcpTransport::connect_to(const NodeId& node) {
  if (auto it = out_.find(node); it != out_.end()) return it->second;
  auto r = routes_.find(node);
  if (r == routes_.end()) return -1;
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  auto sa = make_addr(r->second);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    ::close(fd);
    return -1;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  out_[node] = fd;
  return fd;
}

void TcpTransport::close_out(const NodeId& node) {
  if (auto it = out_.find(node); it != out_.end()) {
    ::close(it->second);
    out_.erase(it);
  }
}

void TcpTransport::transmit(const Envelope& e, SimTime) {
  const int fd = connect_to(e.dst);
  if (fd < 0) {
    logger()->debug("tcp {}: no connection to '{}'", self_, e.dst);
    return;
  }
  const std::string frame = encode_frame(e);
  std::size_t off = 0;
  while (off < frame.size()) {
    const auto n = ::send(fd, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
    if (n <= 0) {
      logger()->debug("tcp {}: write to '{}' failed: {}", self_, e.dst, std::strerror(errno));
      close_out(e.dst);
      return;
    }
    off += static_cast<std::size_t>(n);
  }
}

std::vector<Envelope> TcpTransport::collect(const NodeId& node, SimTime) {
  for (;;) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) break;
    set_nonblocking(fd);
    auto c = std::make_unique<Conn>();
    c->fd = fd;
    in_.push_back(std::move(c));
  }
  std::vector<Envelope> out;
  char buf[8192];
  for (auto it = in_.begin(); it != in_.end();) {
    Conn& c = **it;
    bool closed = false;
    for (;;) {
      const auto n = ::recv(c.fd, buf, sizeof buf, 0);
      if (n > 0) {
        c.decoder.feed(buf, static_cast<std::size_t>(n));
        continue;
      }
      if (n == 0 || (errno != EAGAIN && errno != EWOULDBLOCK)) closed = true;
      break;
    }
    try {
      while (auto e = c.decoder.next()) {
        if (e->dst == node) out.push_back(std::move(*e));
      }
    } catch (const ProtocolError& err) {
      ++protocol_errors_;
      logger()->warn("tcp {}: dropping connection: {}", self_, err.what());
      closed = true;
    }
    if (closed) {
      ::close(c.fd);
      it = in_.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

}  // namespace ccic::link
