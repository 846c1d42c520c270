#include <doctest.h>

#include <chrono>
#include <thread>

#include "support.hpp"
#include "wsonar/error.hpp"
#include "wsonar/wire.hpp"

using namespace wsonar;

namespace {

WindowSample small_window(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  WindowSample w;
  w.frames = 16;
  w.pixels = 24;
  w.channels = 1;
  for (std::size_t i = 0; i < 16 * 24; ++i) w.tensor.push_back(static_cast<float>(g(rng)));
  return w;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::io;
}

}  // namespace

TEST_SUITE("wire") {

TEST_CASE("message bodies round trip") {
  const auto req = make_request(HeadKind::wrist3, small_window(1));
  const auto back = decode_request(encode_request(req));
  CHECK(back.head == HeadKind::wrist3);
  CHECK(back.frames == 16);
  CHECK(back.pixels == 24);
  CHECK(back.channels == 1);
  CHECK(back.tensor == req.tensor);
  const InferResponse resp{HeadKind::class12, std::vector<float>(12, 0.5f)};
  const auto r = decode_response(encode_response(resp));
  CHECK(r.head == HeadKind::class12);
  CHECK(r.values == resp.values);

  auto body = encode_request(req);
  body.pop_back();
  CHECK(code_of([&] { decode_request(body); }) == Errc::protocol_error);
  body = encode_response(resp);
  body[0] = 7;
  CHECK(code_of([&] { decode_response(body); }) == Errc::protocol_error);
}

TEST_CASE("canned endpoint") {
  InferenceServer server([](const InferRequest& req) {
    InferResponse r{req.head, std::vector<float>(head_dim(req.head))};
    for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = static_cast<float>(i) + req.tensor[0];
    return r;
  });
  const auto w = small_window(2);
  const auto p = external_infer(server.endpoint(), HeadKind::wrist3, w);
  REQUIRE(p.values.size() == 3);
  CHECK(p.values[2] == 2.0f + w.tensor[0]);
  CHECK(server.served() == 1);
}

TEST_CASE("malformed replies are protocol errors") {
  InferenceServer wrong_dim([](const InferRequest& req) { return InferResponse{req.head, {1.0f, 2.0f}}; });
  CHECK(code_of([&] { external_infer(wrong_dim.endpoint(), HeadKind::wrist3, small_window(3)); }) ==
        Errc::protocol_error);
  InferenceServer wrong_head([](const InferRequest&) { return InferResponse{HeadKind::wrist3, {1, 2, 3}}; });
  CHECK(code_of([&] { external_infer(wrong_head.endpoint(), HeadKind::class12, small_window(3)); }) ==
        Errc::protocol_error);
  InferenceServer throws([](const InferRequest&) -> InferResponse { fail(Errc::io, "boom"); });
  CHECK(code_of([&] { external_infer(throws.endpoint(), HeadKind::wrist3, small_window(3)); }) ==
        Errc::protocol_error);
}

TEST_CASE("served model matches in-process prediction") {
  FeatureSet train(HeadKind::pose60, FeatureConfig{});
  for (std::uint64_t i = 0; i < 40; ++i) {
    auto w = small_window(100 + i);
    w.label.assign(60, static_cast<float>(i % 5) * 0.01f);
    train.add(w);
  }
  const auto model = fit(train, TrainSpec{});
  InferenceServer server(model_handler(model));
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto w = small_window(500 + i);
    CHECK(external_infer(server.endpoint(), HeadKind::pose60, w).values == model.predict(w).values);
  }
  CHECK(code_of([&] { external_infer(server.endpoint(), HeadKind::wrist3, small_window(9)); }) ==
        Errc::protocol_error);
}

TEST_CASE("unreachable and slow endpoints") {
  std::uint16_t port;
  {
    InferenceServer gone([](const InferRequest& r) { return InferResponse{r.head, {}}; });
    port = gone.port();
  }
  CHECK(code_of([&] { external_infer({"127.0.0.1", port, 500}, HeadKind::wrist3, small_window(4)); }) ==
        Errc::endpoint_unreachable);
  CHECK(code_of([&] { external_infer({"no.such.host.invalid", 1, 500}, HeadKind::wrist3, small_window(4)); }) ==
        Errc::endpoint_unreachable);

  InferenceServer slow([](const InferRequest& req) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    return InferResponse{req.head, std::vector<float>(head_dim(req.head))};
  });
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(code_of([&] { external_infer(slow.endpoint(150), HeadKind::wrist3, small_window(5)); }) == Errc::timeout);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(550));
  CHECK(code_of([&] { external_infer(slow.endpoint(0), HeadKind::wrist3, small_window(5)); }) == Errc::invalid_config);
}

}
