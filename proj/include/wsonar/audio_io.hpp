#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wsonar {

// Multichannel audio, samples nominally in [-1, 1].
struct Audio {
  int rate_hz = 50000;
  std::vector<std::vector<double>> channels;

  std::size_t n_channels() const { return channels.size(); }
  std::size_t n_samples() const { return channels.empty() ? 0 : channels.front().size(); }
};

// Full-scale mapping between [-1, 1] and signed 16-bit, rounding and clipping.
std::int16_t to_pcm16(double x);
double from_pcm16(std::int16_t s);

// Raw interleaved s16le PCM with a JSON sidecar `<path>.json` holding
// {rate_hz, channels, bits}.
void write_pcm(const std::filesystem::path& path, const Audio& audio);
Audio read_pcm(const std::filesystem::path& path);

// RIFF/WAVE, 16-bit PCM.
void write_wav(const std::filesystem::path& path, const Audio& audio);
Audio read_wav(const std::filesystem::path& path);

// Chooses the reader by content: RIFF header, otherwise raw PCM + sidecar.
Audio read_audio(const std::filesystem::path& path);
void write_audio(const std::filesystem::path& path, const Audio& audio);

std::filesystem::path sidecar_path(const std::filesystem::path& pcm_path);

// Writes through a temporary file and renames into place.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace wsonar
