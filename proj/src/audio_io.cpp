#include "wsonar/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <random>

#include "wsonar/bytes.hpp"
#include "wsonar/error.hpp"

namespace wsonar {
namespace fs = std::filesystem;

std::int16_t to_pcm16(double x) {
  const double v = std::round(x * 32767.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

double from_pcm16(std::int16_t s) { return static_cast<double>(s) / 32767.0; }

fs::path sidecar_path(const fs::path& pcm_path) {
  fs::path p = pcm_path;
  p += ".json";
  return p;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(std::random_device{}());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      fs::remove(tmp);
      fail(Errc::io, "short write to " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

namespace {

void check_audio(const Audio& audio) {
  require(audio.rate_hz > 0, Errc::invalid_config, "audio rate must be positive");
  require(!audio.channels.empty(), Errc::invalid_config, "audio has no channels");
  for (const auto& ch : audio.channels)
    require(ch.size() == audio.n_samples(), Errc::shape_mismatch, "channel lengths differ");
}

std::vector<std::int16_t> interleave(const Audio& audio) {
  const std::size_t n = audio.n_samples(), c = audio.n_channels();
  std::vector<std::int16_t> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = to_pcm16(audio.channels[ch][i]);
  return out;
}

Audio deinterleave(const std::vector<std::int16_t>& samples, int channels, int rate) {
  require(channels >= 1, Errc::format, "channel count must be positive");
  require(samples.size() % static_cast<std::size_t>(channels) == 0, Errc::format,
          "sample count is not a multiple of the channel count");
  Audio audio;
  audio.rate_hz = rate;
  const std::size_t n = samples.size() / static_cast<std::size_t>(channels);
  audio.channels.assign(static_cast<std::size_t>(channels), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < channels; ++ch)
      audio.channels[static_cast<std::size_t>(ch)][i] =
          from_pcm16(samples[i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(ch)]);
  return audio;
}

}  // namespace

void write_pcm(const fs::path& path, const Audio& audio) {
  check_audio(audio);
  const auto samples = interleave(audio);
  ByteWriter w;
  w.put_array<std::int16_t>(samples);
  nlohmann::json header = {{"rate_hz", audio.rate_hz},
                           {"channels", audio.n_channels()},
                           {"bits", 16}};
  write_file_atomic(path, w.bytes());
  write_text_atomic(sidecar_path(path), header.dump(2) + "\n");
}

Audio read_pcm(const fs::path& path) {
  const auto side = sidecar_path(path);
  std::ifstream in(side);
  if (!in) fail(Errc::io, "missing PCM sidecar " + side.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, "bad PCM sidecar: " + std::string(e.what()));
  }
  const int rate = header.value("rate_hz", 0);
  const int channels = header.value("channels", 0);
  const int bits = header.value("bits", 0);
  require(rate > 0, Errc::format, "sidecar rate_hz must be positive");
  require(bits == 16, Errc::format, "only 16-bit PCM is supported");
  const auto bytes = read_file_bytes(path);
  require(bytes.size() % 2 == 0, Errc::format, "odd byte count in 16-bit PCM");
  ByteReader r(bytes);
  return deinterleave(r.get_array<std::int16_t>(bytes.size() / 2), channels, rate);
}

void write_wav(const fs::path& path, const Audio& audio) {
  check_audio(audio);
  const auto samples = interleave(audio);
  const auto channels = static_cast<std::uint16_t>(audio.n_channels());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  ByteWriter w;
  w.put_tag("RIFF");
  w.put<std::uint32_t>(36 + data_bytes);
  w.put_tag("WAVE");
  w.put_tag("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(channels);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(audio.rate_hz));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(audio.rate_hz) * channels * 2u);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(channels * 2));
  w.put<std::uint16_t>(16);
  w.put_tag("data");
  w.put<std::uint32_t>(data_bytes);
  w.put_array<std::int16_t>(samples);
  write_file_atomic(path, w.bytes());
}

Audio read_wav(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  require(r.tag_is("RIFF"), Errc::format, "not a RIFF file");
  r.get<std::uint32_t>();
  require(r.tag_is("WAVE"), Errc::format, "not a WAVE file");
  int channels = 0, rate = 0, bits = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    ByteReader peek = r;
    const bool is_fmt = peek.tag_is("fmt ");
    ByteReader peek2 = r;
    const bool is_data = peek2.tag_is("data");
    r.get<std::uint32_t>();
    const auto size = r.get<std::uint32_t>();
    if (is_fmt) {
      const auto fmt = r.get<std::uint16_t>();
      channels = r.get<std::uint16_t>();
      rate = static_cast<int>(r.get<std::uint32_t>());
      r.get<std::uint32_t>();
      r.get<std::uint16_t>();
      bits = r.get<std::uint16_t>();
      require(fmt == 1, Errc::format, "only PCM WAVE is supported");
      r.get_array<std::uint8_t>(size - 16 + (size & 1u));
      have_fmt = true;
    } else if (is_data) {
      require(have_fmt, Errc::format, "data chunk before fmt chunk");
      require(bits == 16, Errc::format, "only 16-bit WAVE is supported");
      return deinterleave(r.get_array<std::int16_t>(size / 2), channels, rate);
    } else {
      r.get_array<std::uint8_t>(size + (size & 1u));
    }
  }
  fail(Errc::format, "WAVE file has no data chunk");
}

Audio read_audio(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::string(magic, 4) == "RIFF") return read_wav(path);
  return read_pcm(path);
}

void write_audio(const fs::path& path, const Audio& audio) {
  if (path.extension() == ".wav")
    write_wav(path, audio);
  else
    write_pcm(path, audio);
}

}  // namespace wsonar
