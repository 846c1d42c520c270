#include "wsonar/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>

#include "wsonar/bytes.hpp"
#include "wsonar/error.hpp"

namespace wsonar {
namespace {

using Clock = std::chrono::steady_clock;

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

HeadKind wire_head(std::uint8_t v) {
  require(v <= 2, Errc::protocol_error, "unknown head kind " + std::to_string(v));
  return static_cast<HeadKind>(v);
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

void wait_for(int fd, short events, Clock::time_point deadline, const char* what) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return;
    if (rc == 0) fail(Errc::timeout, what);
    if (errno != EINTR) fail(Errc::io, std::string("poll: ") + std::strerror(errno));
  }
}

void send_all(int fd, std::span<const std::uint8_t> bytes, Clock::time_point deadline) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    wait_for(fd, POLLOUT, deadline, "timed out sending");
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      fail(Errc::protocol_error, std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

// False on a clean end of stream before the first byte.
bool recv_all(int fd, std::span<std::uint8_t> out, Clock::time_point deadline) {
  std::size_t got = 0;
  while (got < out.size()) {
    wait_for(fd, POLLIN, deadline, "timed out receiving");
    const ssize_t n = ::recv(fd, out.data() + got, out.size() - got, 0);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      fail(Errc::protocol_error, std::string("recv: ") + std::strerror(errno));
    }
    if (n == 0) {
      if (got == 0) return false;
      fail(Errc::protocol_error, "connection closed mid-message");
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

void send_message(int fd, std::span<const std::uint8_t> body, Clock::time_point deadline) {
  require(body.size() <= kMaxWireBody, Errc::protocol_error, "message too large");
  ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(body.size()));
  w.put_bytes(body);
  send_all(fd, w.bytes(), deadline);
}

std::optional<std::vector<std::uint8_t>> recv_message(int fd, Clock::time_point deadline) {
  std::uint8_t len_bytes[4];
  if (!recv_all(fd, len_bytes, deadline)) return std::nullopt;
  std::uint32_t len;
  std::memcpy(&len, len_bytes, 4);
  require(len <= kMaxWireBody, Errc::protocol_error, "message length " + std::to_string(len) + " too large");
  std::vector<std::uint8_t> body(len);
  if (len > 0 && !recv_all(fd, body, deadline)) fail(Errc::protocol_error, "connection closed mid-message");
  return body;
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  require(flags >= 0 && ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) == 0, Errc::io, "fcntl failed");
}

int connect_to(const Endpoint& ep, Clock::time_point deadline) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
    fail(Errc::endpoint_unreachable, "cannot resolve " + ep.host);
  std::string last = "no address";
  for (addrinfo* a = res; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    set_nonblocking(fd);
    int rc = ::connect(fd, a->ai_addr, a->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc == 0) {
        ::close(fd);
        ::freeaddrinfo(res);
        fail(Errc::timeout, "timed out connecting to " + ep.host + ":" + port);
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      rc = err == 0 && rc > 0 ? 0 : -1;
      if (err) errno = err;
    }
    if (rc == 0) {
      ::freeaddrinfo(res);
      return fd;
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  fail(Errc::endpoint_unreachable, ep.host + ":" + port + ": " + last);
}

}  // namespace

InferRequest make_request(HeadKind head, const WindowSample& w) {
  require(w.tensor.size() == w.frames * w.pixels * w.channels, Errc::shape_mismatch, "window tensor size");
  InferRequest r;
  r.head = head;
  r.frames = static_cast<std::uint32_t>(w.frames);
  r.pixels = static_cast<std::uint32_t>(w.pixels);
  r.channels = static_cast<std::uint32_t>(w.channels);
  r.tensor = w.tensor;
  return r;
}

std::vector<std::uint8_t> encode_request(const InferRequest& req) {
  require(req.tensor.size() == std::size_t{req.frames} * req.pixels * req.channels, Errc::shape_mismatch,
          "request tensor size");
  ByteWriter w;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(req.head));
  w.put<std::uint32_t>(req.frames);
  w.put<std::uint32_t>(req.pixels);
  w.put<std::uint32_t>(req.channels);
  w.put_array<float>(req.tensor);
  return std::move(w).bytes();
}

InferRequest decode_request(std::span<const std::uint8_t> body) {
  try {
    ByteReader r(body);
    InferRequest req;
    req.head = wire_head(r.get<std::uint8_t>());
    req.frames = r.get<std::uint32_t>();
    req.pixels = r.get<std::uint32_t>();
    req.channels = r.get<std::uint32_t>();
    const std::uint64_t n = std::uint64_t{req.frames} * req.pixels * req.channels;
    require(n * sizeof(float) == r.remaining(), Errc::protocol_error, "request tensor size differs from W*P*C");
    req.tensor = r.get_array<float>(static_cast<std::size_t>(n));
    return req;
  } catch (const Error& e) {
    if (e.code() == Errc::protocol_error) throw;
    fail(Errc::protocol_error, std::string("bad request: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_response(const InferResponse& resp) {
  ByteWriter w;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(resp.head));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(resp.values.size()));
  w.put_array<float>(resp.values);
  return std::move(w).bytes();
}

InferResponse decode_response(std::span<const std::uint8_t> body) {
  try {
    ByteReader r(body);
    InferResponse resp;
    resp.head = wire_head(r.get<std::uint8_t>());
    const auto dim = r.get<std::uint32_t>();
    require(std::uint64_t{dim} * sizeof(float) == r.remaining(), Errc::protocol_error,
            "response vector size differs from its dimension");
    resp.values = r.get_array<float>(dim);
    return resp;
  } catch (const Error& e) {
    if (e.code() == Errc::protocol_error) throw;
    fail(Errc::protocol_error, std::string("bad response: ") + e.what());
  }
}

Prediction external_infer(const Endpoint& endpoint, HeadKind head, const WindowSample& window) {
  require(endpoint.timeout_ms > 0, Errc::invalid_config, "endpoint timeout must be positive");
  const auto body = encode_request(make_request(head, window));
  const auto deadline = Clock::now() + std::chrono::milliseconds(endpoint.timeout_ms);
  Fd fd(connect_to(endpoint, deadline));
  send_message(fd.get(), body, deadline);
  const auto reply = recv_message(fd.get(), deadline);
  require(reply.has_value(), Errc::protocol_error, "endpoint closed the connection without a reply");
  const InferResponse resp = decode_response(*reply);
  require(resp.head == head, Errc::protocol_error,
          std::string("endpoint answered head ") + to_string(resp.head) + " for " + to_string(head));
  require(resp.values.size() == head_dim(head), Errc::protocol_error,
          "endpoint returned " + std::to_string(resp.values.size()) + " values for head " + to_string(head));
  return make_prediction(head, resp.values);
}

InferenceServer::InferenceServer(Handler handler, std::uint16_t port, std::string host)
    : handler_(std::move(handler)), host_(std::move(host)) {
  require(static_cast<bool>(handler_), Errc::invalid_config, "inference server needs a handler");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  require(::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) == 1, Errc::invalid_config,
          "server host must be an IPv4 address: " + host_);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  require(listen_fd_ >= 0, Errc::io, "cannot create socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    fail(Errc::io, "cannot listen on " + host_ + ":" + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  thread_ = std::thread([this] { run(); });
}

InferenceServer::~InferenceServer() { stop(); }

void InferenceServer::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

void InferenceServer::run() {
  while (!stop_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
    if (fd < 0) continue;
    Fd conn(fd);
    try {
      serve_connection(fd);
    } catch (const std::exception&) {
      // Drop the connection; the client sees the close.
    }
  }
}

void InferenceServer::serve_connection(int fd) {
  constexpr auto kIdle = std::chrono::seconds(5);
  while (!stop_) {
    const auto msg = recv_message(fd, Clock::now() + kIdle);
    if (!msg) return;
    const InferResponse resp = handler_(decode_request(*msg));
    send_message(fd, encode_response(resp), Clock::now() + kIdle);
    ++served_;
  }
}

InferenceServer::Handler model_handler(BaselineModel model) {
  return [m = std::move(model)](const InferRequest& req) {
    require(req.head == m.head(), Errc::head_mismatch, "request head differs from the served model");
    WindowSample w;
    w.frames = req.frames;
    w.pixels = req.pixels;
    w.channels = req.channels;
    w.tensor = req.tensor;
    const Prediction p = m.predict(w);
    return InferResponse{p.head, p.values};
  };
}

}  // namespace wsonar
