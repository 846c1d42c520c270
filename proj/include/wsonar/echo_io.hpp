#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "wsonar/echo.hpp"

namespace wsonar {

// ECHP binary layout, little-endian:
//   "ECHP" | u32 version | u32 frames | u32 pixels | u32 channels | u32 kind |
//   f64 pixel_distance_m | frames*pixels*channels f32, row-major
inline constexpr std::uint32_t kEchpVersion = 1;

std::vector<std::uint8_t> encode_echp(const EchoProfile& profile);
EchoProfile decode_echp(std::span<const std::uint8_t> bytes);

void write_echp(const std::filesystem::path& path, const EchoProfile& profile);
EchoProfile read_echp(const std::filesystem::path& path);

// frames x pixels grid of one channel, one frame per line.
void write_csv(std::ostream& out, const EchoProfile& profile, std::size_t channel);

}  // namespace wsonar
