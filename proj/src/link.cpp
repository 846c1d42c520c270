#include "wsonar/link.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "wsonar/bytes.hpp"
#include "wsonar/error.hpp"

namespace wsonar {
namespace {

constexpr std::uint8_t kMagic0 = 0xEC;
constexpr std::uint8_t kMagic1 = 0x57;
constexpr std::size_t kHeaderBytes = 2 + 4 + 2;
constexpr double kMu = 255.0;

}  // namespace

void LinkConfig::validate() const {
  require(bits_per_sample == 8, Errc::invalid_config, "only 8-bit samples are supported on the link");
  require(channels >= 1, Errc::invalid_config, "link needs at least one channel");
  require(sample_rate_hz > 0, Errc::invalid_config, "link sample rate must be positive");
  require(payload_samples_per_packet >= 1 &&
              static_cast<long>(payload_samples_per_packet) * channels <= 0xFFFF,
          Errc::invalid_config, "payload must fit a u16 length");
  require(loss_probability >= 0.0 && loss_probability <= 1.0, Errc::invalid_config,
          "loss_probability must be in [0,1]");
  if (burst) {
    for (double p : {burst->p_good_to_bad, burst->p_bad_to_good, burst->loss_good, burst->loss_bad})
      require(p >= 0.0 && p <= 1.0, Errc::invalid_config, "burst probabilities must be in [0,1]");
  }
}

std::vector<std::int8_t> truncate8(std::span<const std::int16_t> samples) {
  std::vector<std::int8_t> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = static_cast<std::int8_t>(samples[i] >> 8);
  return out;
}

std::vector<std::int16_t> expand8(std::span<const std::int8_t> samples) {
  std::vector<std::int16_t> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out[i] = static_cast<std::int16_t>(static_cast<std::int16_t>(samples[i]) * 256);
  return out;
}

std::int8_t mulaw_encode(std::int16_t sample) {
  const double x = std::clamp(static_cast<double>(sample) / 32768.0, -1.0, 1.0);
  const double y = std::copysign(std::log1p(kMu * std::abs(x)) / std::log1p(kMu), x);
  return static_cast<std::int8_t>(std::lround(y * 127.0));
}

std::int16_t mulaw_decode(std::int8_t code) {
  const double y = static_cast<double>(code) / 127.0;
  const double x = std::copysign(std::expm1(std::abs(y) * std::log1p(kMu)) / kMu, y);
  return static_cast<std::int16_t>(std::clamp(std::lround(x * 32768.0), -32768L, 32767L));
}

std::uint16_t crc16_ccitt(std::span<const std::uint8_t> bytes, std::uint16_t crc) {
  for (std::uint8_t b : bytes) {
    crc ^= static_cast<std::uint16_t>(b) << 8;
    for (int i = 0; i < 8; ++i)
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021) : static_cast<std::uint16_t>(crc << 1);
  }
  return crc;
}

std::uint16_t LinkPacket::compute_crc() const {
  std::uint8_t seq_bytes[4];
  for (int i = 0; i < 4; ++i) seq_bytes[i] = static_cast<std::uint8_t>(seq >> (8 * i));
  return crc16_ccitt(payload, crc16_ccitt(seq_bytes));
}

LinkPacket LinkPacket::make(std::uint32_t seq, std::vector<std::uint8_t> payload) {
  LinkPacket p;
  p.seq = seq;
  p.payload = std::move(payload);
  p.crc = p.compute_crc();
  return p;
}

std::vector<std::uint8_t> encode_packet(const LinkPacket& packet) {
  require(packet.payload.size() <= 0xFFFF, Errc::invalid_config, "payload too large");
  ByteWriter w;
  w.put<std::uint8_t>(kMagic0);
  w.put<std::uint8_t>(kMagic1);
  w.put<std::uint32_t>(packet.seq);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(packet.payload.size()));
  w.put_bytes(packet.payload);
  w.put<std::uint16_t>(packet.crc);
  return std::move(w).bytes();
}

std::vector<LinkPacket> PacketParser::feed(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  std::vector<LinkPacket> out;
  std::size_t pos = 0;
  while (buf_.size() - pos >= kHeaderBytes + 2) {
    if (buf_[pos] != kMagic0 || buf_[pos + 1] != kMagic1) {
      ++pos;
      ++skipped_;
      continue;
    }
    ByteReader header(std::span<const std::uint8_t>(buf_).subspan(pos + 2, 6));
    const auto seq = header.get<std::uint32_t>();
    const auto len = header.get<std::uint16_t>();
    const std::size_t total = kHeaderBytes + len + 2;
    if (buf_.size() - pos < total) break;
    LinkPacket p;
    p.seq = seq;
    p.payload.assign(buf_.begin() + static_cast<std::ptrdiff_t>(pos + kHeaderBytes),
                     buf_.begin() + static_cast<std::ptrdiff_t>(pos + kHeaderBytes + len));
    p.crc = static_cast<std::uint16_t>(buf_[pos + kHeaderBytes + len] |
                                       (buf_[pos + kHeaderBytes + len + 1] << 8));
    if (p.crc_valid()) {
      out.push_back(std::move(p));
      pos += total;
    } else {
      // Could be a false magic inside a payload, so resync one byte later.
      ++corrupt_;
      ++pos;
      ++skipped_;
    }
  }
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos));
  return out;
}

std::vector<LinkPacket> packetize(const std::vector<std::vector<std::int16_t>>& audio, const LinkConfig& cfg) {
  cfg.validate();
  require(audio.size() == static_cast<std::size_t>(cfg.channels), Errc::shape_mismatch,
          "audio channel count differs from link config");
  const std::size_t n = audio.front().size();
  for (const auto& ch : audio) require(ch.size() == n, Errc::shape_mismatch, "channels differ in length");
  const auto nc = static_cast<std::size_t>(cfg.channels);
  const auto per = static_cast<std::size_t>(cfg.payload_samples_per_packet);
  std::vector<LinkPacket> out;
  out.reserve((n + per - 1) / per);
  std::uint32_t seq = cfg.start_seq;
  for (std::size_t start = 0; start < n; start += per, ++seq) {
    const std::size_t count = std::min(per, n - start);
    std::vector<std::uint8_t> payload(count * nc);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < nc; ++c) {
        const std::int16_t s = audio[c][start + i];
        const std::int8_t v = cfg.truncation == Truncation::linear ? static_cast<std::int8_t>(s >> 8)
                                                                   : mulaw_encode(s);
        payload[i * nc + c] = static_cast<std::uint8_t>(v);
      }
    out.push_back(LinkPacket::make(seq, std::move(payload)));
  }
  return out;
}

void emit_packets(std::span<const LinkPacket> packets, const LinkConfig& cfg, Pacing pacing,
                  const std::function<void(const LinkPacket&)>& sink) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto per = std::chrono::duration<double>(cfg.packet_duration_s());
  for (std::size_t k = 0; k < packets.size(); ++k) {
    if (pacing == Pacing::realtime)
      std::this_thread::sleep_until(t0 + std::chrono::duration_cast<clock::duration>(per * static_cast<double>(k + 1)));
    sink(packets[k]);
  }
}

LossModel::LossModel(const LinkConfig& cfg) : p_(cfg.loss_probability), burst_(cfg.burst), rng_(cfg.seed) {}

bool LossModel::drop() {
  if (!burst_) return unit_(rng_) < p_;
  const double flip = unit_(rng_);
  if (bad_ ? flip < burst_->p_bad_to_good : flip < burst_->p_good_to_bad) bad_ = !bad_;
  return unit_(rng_) < (bad_ ? burst_->loss_bad : burst_->loss_good);
}

std::vector<LinkPacket> channel(std::span<const LinkPacket> packets, const LinkConfig& cfg) {
  cfg.validate();
  LossModel loss(cfg);
  std::vector<LinkPacket> out;
  out.reserve(packets.size());
  for (const auto& p : packets)
    if (!loss.drop()) out.push_back(p);
  return out;
}

std::size_t ReceivedAudio::masked_samples() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Audio ReceivedAudio::to_audio(int rate_hz) const {
  Audio a;
  a.rate_hz = rate_hz;
  for (const auto& ch : channels) {
    std::vector<double> v(ch.size());
    std::transform(ch.begin(), ch.end(), v.begin(), from_pcm16);
    a.channels.push_back(std::move(v));
  }
  return a;
}

ReceivedAudio receive(std::span<const LinkPacket> packets, const LinkConfig& cfg,
                      std::optional<std::size_t> expected_samples) {
  cfg.validate();
  const auto nc = static_cast<std::size_t>(cfg.channels);
  const auto per = static_cast<std::size_t>(cfg.payload_samples_per_packet);
  ReceivedAudio out;
  out.channels.assign(nc, {});
  auto fill_gap = [&](std::size_t samples) {
    for (auto& ch : out.channels) ch.insert(ch.end(), samples, 0);
    out.mask.insert(out.mask.end(), samples, 1);
  };
  std::uint32_t expected = cfg.start_seq;
  for (const auto& p : packets) {
    if (!p.crc_valid() || p.payload.size() % nc != 0) {
      ++out.rejected_packets;
      continue;
    }
    const std::uint32_t gap = p.seq - expected;  // modulo 2^32
    if (gap >= 0x80000000u) {
      // Behind the expected sequence: a duplicate or reordered packet.
      ++out.rejected_packets;
      continue;
    }
    fill_gap(static_cast<std::size_t>(gap) * per);
    out.lost_packets += gap;
    const std::size_t count = p.payload.size() / nc;
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < nc; ++c) {
        const auto code = static_cast<std::int8_t>(p.payload[i * nc + c]);
        out.channels[c].push_back(cfg.truncation == Truncation::linear
                                      ? static_cast<std::int16_t>(static_cast<std::int16_t>(code) * 256)
                                      : mulaw_decode(code));
      }
    out.mask.insert(out.mask.end(), count, 0);
    expected = p.seq + 1;
  }
  if (expected_samples) {
    const std::size_t have = out.mask.size();
    if (have < *expected_samples) {
      const std::size_t missing = *expected_samples - have;
      out.lost_packets += (missing + per - 1) / per;
      fill_gap(missing);
    } else if (have > *expected_samples) {
      for (auto& ch : out.channels) ch.resize(*expected_samples);
      out.mask.resize(*expected_samples);
    }
  }
  return out;
}

void write_packet_stream(const std::filesystem::path& path, std::span<const LinkPacket> packets) {
  std::vector<std::uint8_t> bytes;
  for (const auto& p : packets) {
    const auto enc = encode_packet(p);
    bytes.insert(bytes.end(), enc.begin(), enc.end());
  }
  write_file_atomic(path, bytes);
}

std::vector<LinkPacket> read_packet_stream(const std::filesystem::path& path) {
  PacketParser parser;
  return parser.feed(read_file_bytes(path));
}

std::vector<LinkPacket> transmit_over_socket(std::span<const LinkPacket> packets, const LinkConfig& cfg,
                                             Pacing pacing) {
  cfg.validate();
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) fail(Errc::io, "socketpair failed");
  std::thread sender([&, fd = fds[0]] {
    LossModel loss(cfg);
    emit_packets(packets, cfg, pacing, [&](const LinkPacket& p) {
      if (loss.drop()) return;
      const auto bytes = encode_packet(p);
      std::size_t off = 0;
      while (off < bytes.size()) {
        const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n <= 0) return;
        off += static_cast<std::size_t>(n);
      }
    });
    ::shutdown(fd, SHUT_WR);
  });
  PacketParser parser;
  std::vector<LinkPacket> received;
  std::uint8_t buf[8192];
  for (;;) {
    const ssize_t n = ::read(fds[1], buf, sizeof buf);
    if (n <= 0) break;
    auto got = parser.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
    received.insert(received.end(), std::make_move_iterator(got.begin()), std::make_move_iterator(got.end()));
  }
  sender.join();
  ::close(fds[0]);
  ::close(fds[1]);
  return received;
}

std::vector<std::vector<std::int16_t>> audio_to_pcm16(const Audio& audio) {
  std::vector<std::vector<std::int16_t>> out;
  for (const auto& ch : audio.channels) {
    std::vector<std::int16_t> v(ch.size());
    std::transform(ch.begin(), ch.end(), v.begin(), to_pcm16);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace wsonar
