#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <future>
#include <system_error>
#include <utility>

#include "fbo/errors.hpp"
#include "fbo/federation.hpp"

namespace fbo {

namespace {

using Clock = std::chrono::steady_clock;

class Socket {
 public:
  explicit Socket(int fd = -1) : fd_(fd) {}
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      if (fd_ >= 0) ::close(fd_);
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int fd() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  explicit operator bool() const { return fd_ >= 0; }

 private:
  int fd_;
};

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

bool wait_for(int fd, short events, Clock::time_point deadline) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) return false;
  }
}

// false on timeout or peer error.
bool send_all(int fd, std::span<const std::uint8_t> data, Clock::time_point deadline) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    if (!wait_for(fd, POLLOUT, deadline)) return false;
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

enum class RecvResult { kOk, kTimeout, kClosed };

RecvResult recv_exact(int fd, std::uint8_t* out, std::size_t len, Clock::time_point deadline) {
  std::size_t got = 0;
  while (got < len) {
    if (!wait_for(fd, POLLIN, deadline)) return RecvResult::kTimeout;
    const ssize_t n = ::recv(fd, out + got, len - got, 0);
    if (n == 0) return RecvResult::kClosed;
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      return RecvResult::kClosed;
    }
    got += static_cast<std::size_t>(n);
  }
  return RecvResult::kOk;
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

}  // namespace

InProcessEndpoint::InProcessEndpoint(Handler handler, std::string name)
    : handler_(std::move(handler)), name_(std::move(name)) {}

std::optional<Bytes> InProcessEndpoint::fetch(std::chrono::milliseconds timeout) { return handler_(timeout); }

TcpEndpoint::TcpEndpoint(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}

std::string TcpEndpoint::describe() const { return host_ + ":" + std::to_string(port_); }

std::optional<Bytes> TcpEndpoint::fetch(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host_.c_str(), std::to_string(port_).c_str(), &hints, &res) != 0 || !res) return std::nullopt;
  Socket sock(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (!sock) {
    ::freeaddrinfo(res);
    return std::nullopt;
  }
  set_nonblocking(sock.fd());
  const int rc = ::connect(sock.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    if (errno != EINPROGRESS) return std::nullopt;
    if (!wait_for(sock.fd(), POLLOUT, deadline)) return std::nullopt;
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) return std::nullopt;
  }
  const Bytes request = frame({});
  if (!send_all(sock.fd(), request, deadline)) return std::nullopt;
  std::uint8_t header[4];
  if (recv_exact(sock.fd(), header, 4, deadline) != RecvResult::kOk) return std::nullopt;
  const std::uint32_t len = ByteReader(header).u32("frame length");
  // An oversized length is returned as-is; the decoder then reports it as malformed.
  if (len > kMaxFrameBytes) return Bytes(header, header + 4);
  Bytes payload(len);
  if (len > 0 && recv_exact(sock.fd(), payload.data(), len, deadline) != RecvResult::kOk) return std::nullopt;
  return payload;
}

CollectedRound request_messages(std::span<const AgentEndpoint> endpoints, const CollectOptions& options) {
  std::vector<std::future<std::optional<Bytes>>> pending;
  pending.reserve(endpoints.size());
  for (const auto& ep : endpoints) {
    pending.push_back(std::async(std::launch::async, [&ep, &options]() -> std::optional<Bytes> {
      if (!ep.endpoint) return std::nullopt;
      try {
        return ep.endpoint->fetch(options.timeout);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }));
  }

  CollectedRound round;
  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    StragglerRecord rec{options.round, endpoints[i].agent_id, AgentStatus::kOk, {}};
    std::optional<Bytes> reply = pending[i].get();
    if (!reply) {
      rec.status = AgentStatus::kTimeout;
      rec.detail = "no reply within timeout";
    } else {
      try {
        AgentMessage msg = decode_message(*reply);
        if (msg.agent_id != endpoints[i].agent_id) {
          rec.status = AgentStatus::kMalformed;
          rec.detail = "agent_id " + std::to_string(msg.agent_id) + " does not match configured id";
        } else if (msg.basis_fingerprint != options.expected_fingerprint) {
          rec.status = AgentStatus::kBadFingerprint;
          rec.detail = "basis fingerprint mismatch";
        } else if (options.expected_features && msg.num_features() != *options.expected_features) {
          rec.status = AgentStatus::kMalformed;
          rec.detail = "M: unexpected feature count";
        } else {
          round.messages.push_back(std::move(msg));
        }
      } catch (const ProtocolError& e) {
        rec.status = AgentStatus::kMalformed;
        rec.detail = e.what();
      }
    }
    round.report.push_back(std::move(rec));
  }
  return round;
}

AgentServer::AgentServer(std::uint16_t port, Responder responder, bool loopback_only)
    : responder_(std::move(responder)) {
  Socket sock(::socket(AF_INET, SOCK_STREAM, 0));
  if (!sock) throw std::system_error(errno, std::generic_category(), "socket");
  int one = 1;
  ::setsockopt(sock.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(loopback_only ? INADDR_LOOPBACK : INADDR_ANY);
  if (::bind(sock.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw std::system_error(errno, std::generic_category(), "bind to port " + std::to_string(port));
  if (::listen(sock.fd(), 64) != 0) throw std::system_error(errno, std::generic_category(), "listen");
  socklen_t len = sizeof(addr);
  ::getsockname(sock.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  set_nonblocking(sock.fd());
  listen_fd_ = sock.release();
}

AgentServer::~AgentServer() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void AgentServer::serve(std::optional<std::size_t> max_requests) {
  while (!stop_.load()) {
    if (max_requests && served_.load() >= *max_requests) return;
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    Socket conn(::accept(listen_fd_, nullptr, nullptr));
    if (!conn) continue;
    set_nonblocking(conn.fd());
    const auto deadline = Clock::now() + std::chrono::seconds(5);
    std::uint8_t header[4];
    if (recv_exact(conn.fd(), header, 4, deadline) != RecvResult::kOk) continue;
    const std::uint32_t len = ByteReader(header).u32("frame length");
    if (len > kMaxFrameBytes) continue;
    Bytes request(len);
    if (len > 0 && recv_exact(conn.fd(), request.data(), len, deadline) != RecvResult::kOk) continue;
    Bytes reply;
    try {
      reply = responder_();
    } catch (const std::exception& e) {
      warn(std::string("agent server: responder failed: ") + e.what());
      continue;
    }
    send_all(conn.fd(), frame(reply), deadline);
    ++served_;
  }
}

void AgentServer::start() {
  if (thread_.joinable()) return;
  thread_ = std::thread([this] { serve(); });
}

void AgentServer::stop() {
  stop_.store(true);
  if (thread_.joinable()) thread_.join();
}

std::unique_ptr<AgentServer> serve_agent(const AgentState& agent, std::uint16_t port, RngStream& rng) {
  return std::make_unique<AgentServer>(port, [&agent, &rng] { return encode_message(make_message(agent, rng)); });
}

}  // namespace fbo
