#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "wsonar/dataset.hpp"
#include "wsonar/error.hpp"
#include "wsonar/link.hpp"
#include "wsonar/simulator.hpp"

using namespace wsonar;

namespace {

std::vector<std::vector<std::int16_t>> ramp_pcm(std::size_t channels, std::size_t n) {
  std::vector<std::vector<std::int16_t>> pcm(channels, std::vector<std::int16_t>(n));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < n; ++i)
      pcm[c][i] = static_cast<std::int16_t>((static_cast<int>(i * 97 + c * 5000) % 65536) - 32768);
  return pcm;
}

}  // namespace

TEST_SUITE("link") {

TEST_CASE("throughput at the defaults") {
  LinkConfig cfg;
  CHECK(cfg.throughput_bps() == 800000.0);
  CHECK(cfg.packet_duration_s() == doctest::Approx(0.0024));
  cfg.bits_per_sample = 16;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("truncation keeps the high byte") {
  const std::vector<std::int16_t> in{0x1200, 0x12FF, 0, -1, -256, -32768, 32767};
  const auto t = truncate8(in);
  CHECK(t[0] == 0x12);
  CHECK(t[1] == 0x12);
  CHECK(t[2] == 0);
  CHECK(t[3] == -1);
  CHECK(t[5] == -128);
  const auto e = expand8(t);
  CHECK(e[0] == 0x1200);
  for (std::size_t i = 0; i < in.size(); ++i) {
    CHECK(in[i] - e[i] >= 0);
    CHECK(in[i] - e[i] <= 255);
  }
}

TEST_CASE("full-scale sine survives truncation at 40 dB") {
  std::vector<std::int16_t> s(50000);
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<std::int16_t>(std::lround(32767.0 * std::sin(2 * std::numbers::pi * 1234.5 * i / 50000.0)));
  const auto r = expand8(truncate8(s));
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sig += static_cast<double>(s[i]) * s[i];
    err += std::pow(static_cast<double>(s[i]) - r[i], 2);
  }
  CHECK(10 * std::log10(sig / err) >= 40.0);
}

TEST_CASE("mu-law companding is monotone and close to invertible") {
  int prev = -200;
  for (int v = -32768; v <= 32767; v += 61) {
    const int code = mulaw_encode(static_cast<std::int16_t>(v));
    CHECK(code >= prev);
    prev = code;
  }
  CHECK(mulaw_decode(mulaw_encode(0)) == 0);
  CHECK(std::abs(mulaw_decode(mulaw_encode(20000)) - 20000) < 20000 * 0.05);
}

TEST_CASE("CRC-16/CCITT-FALSE check value") {
  const std::string s = "123456789";
  CHECK(crc16_ccitt(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())) == 0x29B1);
}

TEST_CASE("packet wire format") {
  const auto p = LinkPacket::make(0x01020304, {0xAA, 0xBB, 0xCC});
  const auto bytes = encode_packet(p);
  const std::vector<std::uint8_t> head{0xEC, 0x57, 0x04, 0x03, 0x02, 0x01, 0x03, 0x00, 0xAA, 0xBB, 0xCC};
  REQUIRE(bytes.size() == head.size() + 2);
  CHECK(std::equal(head.begin(), head.end(), bytes.begin()));
  const std::vector<std::uint8_t> covered{0x04, 0x03, 0x02, 0x01, 0xAA, 0xBB, 0xCC};
  const auto crc = crc16_ccitt(covered);
  CHECK(bytes[11] == (crc & 0xFF));
  CHECK(bytes[12] == (crc >> 8));
}

TEST_CASE("parser resynchronises after garbage and corruption") {
  std::vector<std::uint8_t> stream{0x00, 0xEC, 0x11, 0x57};
  std::vector<LinkPacket> sent;
  for (std::uint32_t s = 0; s < 5; ++s) {
    sent.push_back(LinkPacket::make(s, std::vector<std::uint8_t>(10, static_cast<std::uint8_t>(0xEC))));
    auto enc = encode_packet(sent.back());
    if (s == 2) enc[9] ^= 0xFF;
    stream.insert(stream.end(), enc.begin(), enc.end());
  }
  PacketParser parser;
  std::vector<LinkPacket> got;
  // Byte-at-a-time and in one go must agree.
  for (std::size_t i = 0; i < stream.size(); i += 3) {
    auto part = parser.feed(std::span(stream).subspan(i, std::min<std::size_t>(3, stream.size() - i)));
    got.insert(got.end(), part.begin(), part.end());
  }
  REQUIRE(got.size() == 4);
  CHECK(got[2].seq == 3);
  CHECK(parser.corrupt_packets() >= 1);
  PacketParser whole;
  CHECK(whole.feed(stream).size() == 4);
}

TEST_CASE("packetize") {
  LinkConfig cfg;
  auto pcm = ramp_pcm(2, 1200);
  const auto packets = packetize(pcm, cfg);
  REQUIRE(packets.size() == 10);
  for (std::size_t k = 0; k < packets.size(); ++k) {
    CHECK(packets[k].seq == k);
    CHECK(packets[k].payload.size() == 240);
    CHECK(packets[k].crc_valid());
  }
  CHECK(static_cast<std::int8_t>(packets[1].payload[3]) == static_cast<std::int8_t>(pcm[1][121] >> 8));
  cfg.start_seq = 0xFFFFFFFE;
  const auto wrapped = packetize(pcm, cfg);
  CHECK(wrapped[1].seq == 0xFFFFFFFF);
  CHECK(wrapped[2].seq == 0);
  const auto rx = receive(wrapped, cfg);
  CHECK(rx.masked_samples() == 0);
  CHECK(rx.channels[0].size() == 1200);
  pcm[1].pop_back();
  CHECK_THROWS_AS(packetize(pcm, cfg), Error);
}

TEST_CASE("lossless round trip is truncate-then-expand") {
  LinkConfig cfg;
  const auto pcm = ramp_pcm(2, 1000);
  const auto rx = receive(channel(packetize(pcm, cfg), cfg), cfg);
  CHECK(rx.mask == std::vector<std::uint8_t>(1000, 0));
  for (std::size_t c = 0; c < 2; ++c) CHECK(rx.channels[c] == expand8(truncate8(pcm[c])));
}

TEST_CASE("loss probabilities") {
  LinkConfig cfg;
  const auto packets = packetize(ramp_pcm(2, 12000), cfg);
  cfg.loss_probability = 1.0;
  CHECK(channel(packets, cfg).empty());
  cfg.loss_probability = 0.3;
  cfg.seed = 5;
  const auto a = channel(packets, cfg), b = channel(packets, cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].seq == b[i].seq);
}

TEST_CASE("loss rate over 100k packets") {
  LinkConfig cfg;
  cfg.channels = 1;
  cfg.payload_samples_per_packet = 4;
  cfg.loss_probability = 0.0035;
  cfg.seed = 11;
  const std::size_t n = 100000;
  const auto packets = packetize({std::vector<std::int16_t>(4 * n, 0)}, cfg);
  const auto kept = channel(packets, cfg);
  const double loss = 1.0 - static_cast<double>(kept.size()) / n;
  CHECK(loss >= 0.0029);
  CHECK(loss <= 0.0041);
  const auto rx = receive(kept, cfg, 4 * n);
  CHECK(rx.masked_samples() == (n - kept.size()) * 4);
  CHECK(rx.lost_packets == n - kept.size());
}

TEST_CASE("burst losses cluster") {
  LinkConfig cfg;
  cfg.channels = 1;
  cfg.payload_samples_per_packet = 1;
  cfg.burst = GilbertElliott{0.01, 0.2, 0.0, 0.9};
  cfg.seed = 2;
  const std::size_t n = 50000;
  const auto packets = packetize({std::vector<std::int16_t>(n, 0)}, cfg);
  const auto rx = receive(channel(packets, cfg), cfg, n);
  std::size_t lost = 0, runs = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (rx.mask[i]) {
      ++lost;
      if (i == 0 || !rx.mask[i - 1]) ++runs;
    }
  REQUIRE(runs > 0);
  CHECK(static_cast<double>(lost) / runs > 2.0);
}

TEST_CASE("dropped and corrupt packets are masked in place") {
  LinkConfig cfg;
  const auto pcm = ramp_pcm(2, 1200);
  auto packets = packetize(pcm, cfg);
  packets.erase(packets.begin() + 5);
  packets[7].payload[0] ^= 1;
  const auto rx = receive(packets, cfg, 1200);
  CHECK(rx.masked_samples() == 240);
  for (std::size_t i = 0; i < 1200; ++i) {
    const bool gap = (i >= 600 && i < 720) || (i >= 960 && i < 1080);
    CHECK(rx.mask[i] == (gap ? 1 : 0));
    if (gap) CHECK(rx.channels[0][i] == 0);
  }
  CHECK(rx.lost_packets == 2);
  CHECK(rx.rejected_packets == 1);
  // Trailing loss is only visible with the expected length.
  packets.pop_back();
  CHECK(receive(packets, cfg).mask.size() == 960);
  CHECK(receive(packets, cfg, 1200).masked_samples() == 360);
}

TEST_CASE("file replay and socket transport deliver the same packets") {
  LinkConfig cfg;
  cfg.loss_probability = 0.05;
  cfg.seed = 3;
  const auto packets = packetize(ramp_pcm(2, 24000), cfg);
  const auto dir = wsonar::testing::scratch_dir("link");
  write_packet_stream(dir / "p.bin", packets);
  const auto replayed = read_packet_stream(dir / "p.bin");
  REQUIRE(replayed.size() == packets.size());
  CHECK(replayed.back().payload == packets.back().payload);

  const auto over = transmit_over_socket(packets, cfg, Pacing::replay);
  const auto local = channel(packets, cfg);
  REQUIRE(over.size() == local.size());
  for (std::size_t i = 0; i < over.size(); ++i) {
    CHECK(over[i].seq == local[i].seq);
    CHECK(over[i].payload == local[i].payload);
  }
}

TEST_CASE("real-time pacing spreads one second of audio over one second") {
  LinkConfig cfg;
  const auto packets = packetize(ramp_pcm(2, 50000), cfg);
  std::size_t n = 0;
  const auto t0 = std::chrono::steady_clock::now();
  emit_packets(packets, cfg, Pacing::realtime, [&](const LinkPacket&) { ++n; });
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(n == packets.size());
  CHECK(s >= 0.95);
  CHECK(s <= 1.05);
}

TEST_CASE("simulated audio through the link keeps its profiles within the quantization bound") {
  FmcwConfig fmcw;
  ReflectorScene scene;
  scene.reflectors.push_back({Trajectory{{{0.0, 0.04}, {0.1, 0.09}}}, 0.4, {0.0, 0.003}, {}});
  scene.direct_path_gain = 0.3;
  const auto audio = render(scene, fmcw, 10);
  LinkConfig cfg;
  const auto pcm = audio_to_pcm16(audio);
  const auto rx = receive(channel(packetize(pcm, cfg), cfg), cfg, audio.n_samples());
  const auto back = rx.to_audio(50000);

  ProcessOptions po;
  const auto direct = process_audio(audio, po);
  const auto linked = process_audio(back, po);
  // Per-sample error: pcm16 rounding plus the dropped low byte.
  const double e = (0.5 + 255.0) / 32768.0;
  const auto taps = design_bandpass(po.bandpass, 50000);
  const auto tx = gen_chirp(fmcw);
  const double l1_taps = std::accumulate(taps.begin(), taps.end(), 0.0, [](double a, double b) { return a + std::abs(b); });
  const double l1_tx = std::accumulate(tx.begin(), tx.end(), 0.0, [](double a, double b) { return a + std::abs(b); });
  // Differential channels see two frames' worth of error.
  const double bound = 2.0 * e * l1_taps * l1_tx;
  double worst = 0.0;
  for (std::size_t i = 0; i < direct.data().size(); ++i) worst = std::max(worst, std::abs(direct.data()[i] - linked.data()[i]));
  CHECK(worst <= bound);
  CHECK(worst > 0.0);
}

}
