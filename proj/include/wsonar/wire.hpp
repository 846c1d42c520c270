#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "wsonar/model.hpp"

namespace wsonar {

// Every message is a u32 little-endian body length followed by the body.
//   request  body: u8 head, u32 W, u32 P, u32 C, f32[W * P * C] (frame, pixel, channel order)
//   response body: u8 head, u32 dim, f32[dim]
inline constexpr std::uint32_t kMaxWireBody = 64u << 20;

struct InferRequest {
  HeadKind head = HeadKind::pose60;
  std::uint32_t frames = 0, pixels = 0, channels = 0;
  std::vector<float> tensor;
};

struct InferResponse {
  HeadKind head = HeadKind::pose60;
  std::vector<float> values;
};

InferRequest make_request(HeadKind head, const WindowSample& w);

// Bodies without the length prefix. Decoding failures are protocol errors.
std::vector<std::uint8_t> encode_request(const InferRequest& req);
InferRequest decode_request(std::span<const std::uint8_t> body);
std::vector<std::uint8_t> encode_response(const InferResponse& resp);
InferResponse decode_response(std::span<const std::uint8_t> body);

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  int timeout_ms = 5000;  // connect, send and receive each
};

// One request/response exchange on a fresh connection. The reply must carry
// the requested head and its dimension.
Prediction external_infer(const Endpoint& endpoint, HeadKind head, const WindowSample& window);

// Loopback TCP server answering inference requests until destroyed. Port 0
// picks a free port. Connections are served one at a time; a handler that
// throws closes the connection without a reply.
class InferenceServer {
 public:
  using Handler = std::function<InferResponse(const InferRequest&)>;

  explicit InferenceServer(Handler handler, std::uint16_t port = 0, std::string host = "127.0.0.1");
  ~InferenceServer();
  InferenceServer(const InferenceServer&) = delete;
  InferenceServer& operator=(const InferenceServer&) = delete;

  std::uint16_t port() const { return port_; }
  Endpoint endpoint(int timeout_ms = 5000) const { return {host_, port_, timeout_ms}; }
  std::size_t served() const { return served_.load(); }
  void stop();

 private:
  void run();
  void serve_connection(int fd);

  Handler handler_;
  std::string host_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> served_{0};
  std::thread thread_;
};

// Serves `model` (copied) with the same numbers as in-process predict().
InferenceServer::Handler model_handler(BaselineModel model);

}  // namespace wsonar
