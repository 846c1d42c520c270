#include "wsonar/echo_io.hpp"

#include <iomanip>

#include "wsonar/audio_io.hpp"
#include "wsonar/bytes.hpp"

namespace wsonar {

std::vector<std::uint8_t> encode_echp(const EchoProfile& profile) {
  ByteWriter w;
  w.put_tag("ECHP");
  w.put<std::uint32_t>(kEchpVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(profile.frames()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(profile.pixels()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(profile.channels()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(profile.kind()));
  w.put<double>(profile.pixel_distance_m());
  std::vector<float> values(profile.data().begin(), profile.data().end());
  w.put_array<float>(values);
  return std::move(w).bytes();
}

EchoProfile decode_echp(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  require(r.tag_is("ECHP"), Errc::format, "missing ECHP magic");
  const auto version = r.get<std::uint32_t>();
  require(version == kEchpVersion, Errc::format, "unsupported ECHP version");
  const auto frames = r.get<std::uint32_t>();
  const auto pixels = r.get<std::uint32_t>();
  const auto channels = r.get<std::uint32_t>();
  const auto kind = r.get<std::uint32_t>();
  const auto dist = r.get<double>();
  require(kind <= static_cast<std::uint32_t>(ProfileKind::envelope), Errc::format, "unknown ECHP kind");
  require(dist > 0.0, Errc::format, "ECHP pixel distance must be positive");
  const std::size_t count = std::size_t{frames} * pixels * channels;
  const auto values = r.get_array<float>(count);
  require(r.remaining() == 0, Errc::format, "trailing bytes after ECHP payload");
  EchoProfile out(frames, pixels, channels, dist, static_cast<ProfileKind>(kind));
  std::copy(values.begin(), values.end(), out.data().begin());
  return out;
}

void write_echp(const std::filesystem::path& path, const EchoProfile& profile) {
  write_file_atomic(path, encode_echp(profile));
}

EchoProfile read_echp(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_echp(bytes);
}

void write_csv(std::ostream& out, const EchoProfile& profile, std::size_t channel) {
  require(channel < profile.channels(), Errc::shape_mismatch, "csv channel out of range");
  out << std::setprecision(9);
  for (std::size_t f = 0; f < profile.frames(); ++f) {
    for (std::size_t p = 0; p < profile.pixels(); ++p) {
      if (p) out << ',';
      out << profile.at(f, p, channel);
    }
    out << '\n';
  }
}

}  // namespace wsonar
