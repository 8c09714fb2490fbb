#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <string>
#include <utility>

#include <fmt/format.h>

#include "p2p/harness.hpp"

namespace p2p {

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw Error(fmt::format("tcp transport: {}: {}", what, std::strerror(errno)));
}

class Fd {
 public:
  explicit Fd(int fd = -1) noexcept : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    std::swap(fd_, o.fd_);
    return *this;
  }
  int get() const noexcept { return fd_; }
  int release() noexcept { return std::exchange(fd_, -1); }

 private:
  int fd_;
};

sockaddr_in loopback(std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  return addr;
}

void write_all(int fd, const void* data, std::size_t n) {
  const auto* p = static_cast<const char*>(data);
  while (n > 0) {
    const auto w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      fail("send");
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Reads exactly n bytes or throws TransportTimeout when the deadline passes
// or the peer closes the stream.
void read_all(int fd, void* data, std::size_t n, std::chrono::milliseconds timeout,
              const std::string& context) {
  auto* p = static_cast<char*>(data);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (n > 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TransportTimeout(context + ": receive deadline passed");
    pollfd pfd{fd, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      fail("poll");
    }
    if (ready == 0) throw TransportTimeout(context + ": receive deadline passed");
    const auto r = ::recv(fd, p, n, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      fail("recv");
    }
    if (r == 0) throw TransportTimeout(context + ": peer closed the connection");
    p += r;
    n -= static_cast<std::size_t>(r);
  }
}

}  // namespace

TcpOptions TcpOptions::from_env() {
  TcpOptions o;
  if (const char* v = std::getenv("P2P_TCP_PORT_BASE"); v && *v) {
    const long base = std::strtol(v, nullptr, 10);
    if (base <= 0 || base > 65535) {
      throw ValidationError(fmt::format("P2P_TCP_PORT_BASE out of range: {}", v));
    }
    o.port_base = static_cast<std::uint16_t>(base);
  }
  return o;
}

TcpTransport::TcpTransport(const Market& market, TcpOptions options) : Transport(options.timeout) {
  const auto agents = market.agents();
  std::vector<Fd> listeners;
  std::vector<std::uint16_t> ports;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (fd.get() < 0) fail("socket");
    const int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    std::uint16_t port = 0;
    if (options.port_base) {
      const auto wanted = static_cast<unsigned>(*options.port_base) + k;
      if (wanted > 65535) throw ValidationError("tcp port range exceeds 65535");
      port = static_cast<std::uint16_t>(wanted);
    }
    auto addr = loopback(port);
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      fail(fmt::format("bind 127.0.0.1:{}", port));
    }
    if (::listen(fd.get(), 64) < 0) fail("listen");
    socklen_t len = sizeof addr;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    ports.push_back(ntohs(addr.sin_port));
    listeners.push_back(std::move(fd));
  }

  // The lower id dials the higher id and introduces itself with its id.
  for (const auto& e : market.edges()) {
    if (e.from > e.to) continue;
    Fd client(::socket(AF_INET, SOCK_STREAM, 0));
    if (client.get() < 0) fail("socket");
    auto addr = loopback(ports[e.to_index]);
    if (::connect(client.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      fail(fmt::format("connect to agent {}", e.to));
    }
    Fd server(::accept(listeners[e.to_index].get(), nullptr, nullptr));
    if (server.get() < 0) fail("accept");
    const int one = 1;
    ::setsockopt(client.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    ::setsockopt(server.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

    const std::uint32_t hello = htonl(e.from);
    write_all(client.get(), &hello, sizeof hello);
    std::uint32_t got = 0;
    read_all(server.get(), &got, sizeof got, timeout(), "handshake");
    if (ntohl(got) != e.from) throw Error("tcp transport: handshake id mismatch");

    sockets_[{e.from, e.to}] = client.release();
    sockets_[{e.to, e.from}] = server.release();
  }
}

TcpTransport::~TcpTransport() {
  for (auto& [key, fd] : sockets_) ::close(fd);
}

void TcpTransport::send(const TradeMessage& msg) {
  auto it = sockets_.find({msg.from, msg.to});
  if (it == sockets_.end()) {
    throw GraphDisconnected(fmt::format("no connection {} -> {}", msg.from, msg.to));
  }
  const auto frame = encode_frame(msg);
  record(frame);
  write_all(it->second, frame.data(), frame.size());
}

TradeMessage TcpTransport::receive(AgentId self, AgentId from, std::uint64_t iteration) {
  auto it = sockets_.find({self, from});
  if (it == sockets_.end()) {
    throw GraphDisconnected(fmt::format("no connection {} -> {}", from, self));
  }
  Frame frame;
  read_all(it->second, frame.data(), frame.size(), timeout(),
           fmt::format("agent {} waiting on {} in round {}", self, from, iteration));
  const auto msg = decode_frame(frame);
  if (msg.iteration != iteration || msg.from != from || msg.to != self) {
    throw Error(fmt::format("out-of-order record on {} -> {}: round {} while expecting {}", from,
                            self, msg.iteration, iteration));
  }
  return msg;
}

bool TcpTransport::connected(AgentId a, AgentId b) const {
  return sockets_.contains({a, b}) && sockets_.contains({b, a});
}

void TcpTransport::shutdown() {
  for (auto& [key, fd] : sockets_) ::shutdown(fd, SHUT_RDWR);
}

}  // namespace p2p
