#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "wsonar/audio_io.hpp"

namespace wsonar {

enum class Truncation { linear, mulaw };
enum class Pacing { replay, realtime };

// Two-state burst loss model: the channel flips between a good and a bad
// state once per packet and drops with a state-dependent probability.
struct GilbertElliott {
  double p_good_to_bad = 0.001;
  double p_bad_to_good = 0.3;
  double loss_good = 0.0;
  double loss_bad = 0.8;
};

struct LinkConfig {
  int bits_per_sample = 8;
  int channels = 2;
  int sample_rate_hz = 50000;
  int payload_samples_per_packet = 120;  // per channel
  double loss_probability = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t start_seq = 0;
  Truncation truncation = Truncation::linear;
  std::optional<GilbertElliott> burst;

  void validate() const;
  double throughput_bps() const {
    return static_cast<double>(channels) * sample_rate_hz * bits_per_sample;
  }
  double packet_duration_s() const {
    return static_cast<double>(payload_samples_per_packet) / sample_rate_hz;
  }
};

// Keeps the high byte (arithmetic shift right by 8); expansion shifts back.
std::vector<std::int8_t> truncate8(std::span<const std::int16_t> samples);
std::vector<std::int16_t> expand8(std::span<const std::int8_t> samples);
std::int8_t mulaw_encode(std::int16_t sample);
std::int16_t mulaw_decode(std::int8_t code);

// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
std::uint16_t crc16_ccitt(std::span<const std::uint8_t> bytes, std::uint16_t crc = 0xFFFF);

struct LinkPacket {
  std::uint32_t seq = 0;
  std::vector<std::uint8_t> payload;  // interleaved 8-bit samples
  std::uint16_t crc = 0;

  static LinkPacket make(std::uint32_t seq, std::vector<std::uint8_t> payload);
  std::uint16_t compute_crc() const;
  bool crc_valid() const { return crc == compute_crc(); }
};

// Wire format: EC 57 | u32 seq | u16 payload length | payload | u16 crc,
// all little-endian; the CRC covers the seq bytes followed by the payload.
std::vector<std::uint8_t> encode_packet(const LinkPacket& packet);

// Incremental decoder for a byte stream. Bytes that do not form a packet with
// a valid CRC are skipped until the next magic.
class PacketParser {
 public:
  std::vector<LinkPacket> feed(std::span<const std::uint8_t> bytes);
  std::size_t corrupt_packets() const { return corrupt_; }
  std::size_t skipped_bytes() const { return skipped_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t corrupt_ = 0;
  std::size_t skipped_ = 0;
};

// Channels must have equal lengths.
std::vector<LinkPacket> packetize(const std::vector<std::vector<std::int16_t>>& audio, const LinkConfig& cfg);

// Emits packets to `sink`. In real-time mode packet k is released when its
// last sample would have been captured: t0 + (k+1) * packet duration.
void emit_packets(std::span<const LinkPacket> packets, const LinkConfig& cfg, Pacing pacing,
                  const std::function<void(const LinkPacket&)>& sink);

// Per-packet drop decision, deterministic for a given seed.
class LossModel {
 public:
  explicit LossModel(const LinkConfig& cfg);
  bool drop();

 private:
  double p_;
  std::optional<GilbertElliott> burst_;
  bool bad_ = false;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

std::vector<LinkPacket> channel(std::span<const LinkPacket> packets, const LinkConfig& cfg);

struct ReceivedAudio {
  std::vector<std::vector<std::int16_t>> channels;
  std::vector<std::uint8_t> mask;  // per sample index, 1 = zero-filled gap
  std::size_t lost_packets = 0;
  std::size_t rejected_packets = 0;

  std::size_t masked_samples() const;
  Audio to_audio(int rate_hz) const;
};

// Rebuilds audio from whatever arrived. Sequence gaps become zero-filled,
// masked runs of payload_samples_per_packet samples; packets failing the CRC
// are treated as lost. With `expected_samples` the output is padded (masked)
// or trimmed to that length so trailing losses are accounted for.
ReceivedAudio receive(std::span<const LinkPacket> packets, const LinkConfig& cfg,
                      std::optional<std::size_t> expected_samples = std::nullopt);

// Replay transport: concatenated encoded packets in a file.
void write_packet_stream(const std::filesystem::path& path, std::span<const LinkPacket> packets);
std::vector<LinkPacket> read_packet_stream(const std::filesystem::path& path);

// Runs sender and receiver on separate threads joined by a local socket pair;
// the sender applies the loss model and pacing. Returns the packets decoded
// on the receiving side.
std::vector<LinkPacket> transmit_over_socket(std::span<const LinkPacket> packets, const LinkConfig& cfg,
                                             Pacing pacing);

std::vector<std::vector<std::int16_t>> audio_to_pcm16(const Audio& audio);

}  // namespace wsonar
