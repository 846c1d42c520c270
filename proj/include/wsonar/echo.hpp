#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "wsonar/fft.hpp"
#include "wsonar/signal.hpp"

namespace wsonar {

inline constexpr double kSpeedOfSound = 343.0;  // m/s, dry air at 20 C

enum class ProfileKind : std::uint32_t { original = 0, differential = 1, stacked = 2, envelope = 3 };

// Range window of an echo frame, in correlation lags.
struct CropSpec {
  int start_pixel = 0;
  int n_pixels = 72;

  void validate(int frame_len_samples) const;
};

// [frames x pixels x channels] array of signed correlation values, row-major.
class EchoProfile {
 public:
  EchoProfile() = default;
  EchoProfile(std::size_t frames, std::size_t pixels, std::size_t channels,
              double pixel_distance_m, ProfileKind kind);

  std::size_t frames() const { return frames_; }
  std::size_t pixels() const { return pixels_; }
  std::size_t channels() const { return channels_; }
  double pixel_distance_m() const { return pixel_distance_m_; }
  ProfileKind kind() const { return kind_; }
  double extent_m() const { return pixel_distance_m_ * static_cast<double>(pixels_); }

  double at(std::size_t f, std::size_t p, std::size_t c) const {
    return data_[(f * pixels_ + p) * channels_ + c];
  }
  double& at(std::size_t f, std::size_t p, std::size_t c) {
    return data_[(f * pixels_ + p) * channels_ + c];
  }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  // One frame: pixels x channels values.
  std::span<const double> frame(std::size_t f) const {
    return std::span<const double>(data_).subspan(f * pixels_ * channels_, pixels_ * channels_);
  }

  bool same_shape(const EchoProfile& other) const {
    return frames_ == other.frames_ && pixels_ == other.pixels_ && channels_ == other.channels_;
  }

 private:
  std::size_t frames_ = 0, pixels_ = 0, channels_ = 0;
  double pixel_distance_m_ = 0.0;
  ProfileKind kind_ = ProfileKind::original;
  std::vector<double> data_;
};

double pixel_distance_m(int sample_rate_hz, double speed_of_sound = kSpeedOfSound);

// Linear (zero-padded) cross-correlation of one received frame against the
// transmitted chirp: out[p] = sum_n tx[n] * rx[n + p] for lags 0..N-1.
std::vector<double> echo_frame(std::span<const double> rx_frame, std::span<const double> tx_ref);

// Correlates received frames against a fixed, periodically emitted reference:
// out[p] = sum_n tx[n] * rx[(n + p) mod N]. Under continuous emission the
// wrapped part of each lag comes from the echo of the previous sweep, so a
// frame needs no look-ahead into the next one.
class FrameCorrelator {
 public:
  explicit FrameCorrelator(std::span<const double> tx_ref);
  std::size_t frame_len() const { return n_; }
  void correlate(std::span<const double> rx_frame, std::span<double> out);
  // Magnitude of the analytic version of correlate(): the correlation with the
  // carrier removed, peaking at the echo delay even between whole samples.
  void envelope(std::span<const double> rx_frame, std::span<double> out);

 private:
  std::size_t n_;
  RealFft fft_;
  std::vector<std::complex<double>> ref_conj_;
  std::vector<std::complex<double>> spec_;
  std::vector<double> buf_;
  std::vector<std::complex<double>> quad_;
};

struct ProfileOptions {
  // Sample index in each channel where the first transmitted frame starts.
  int tx_start_offset = 0;
  // Apply the band-pass before correlating; off when the caller already did.
  bool apply_bandpass = false;
  BandpassSpec bandpass{};
  double speed_of_sound = kSpeedOfSound;
};

EchoProfile echo_profile(const std::vector<std::vector<double>>& rx, const FmcwConfig& cfg,
                         const CropSpec& crop, const ProfileOptions& opts = {});

// Same framing as echo_profile, holding FrameCorrelator::envelope values.
// Meant for locating reflectors; models take the signed profiles.
EchoProfile envelope_profile(const std::vector<std::vector<double>>& rx, const FmcwConfig& cfg,
                             const CropSpec& crop, const ProfileOptions& opts = {});

// Pixel of the largest |value| in one frame and channel.
std::size_t peak_pixel(const EchoProfile& profile, std::size_t frame, std::size_t channel);

// out[f] = in[f] - in[f-1], out[0] = 0.
EchoProfile differential(const EchoProfile& profile);

// Pixel sub-range of an existing profile; the crop is relative to its pixels.
EchoProfile crop_profile(const EchoProfile& profile, const CropSpec& crop);

// Channel order [orig ch0..chN-1, diff ch0..chN-1].
EchoProfile stack_channels(const EchoProfile& orig, const EchoProfile& diff);

// One output frame of the streaming processor; values are pixels x channels.
struct StreamFrame {
  std::size_t index = 0;
  std::vector<double> original;
  std::vector<double> differential;
};

// Frame-at-a-time echo processing for live streams. Zero-phase band-pass
// filtering needs (taps-1)/2 samples of look-ahead, so frame f is emitted once
// that many samples past its end have arrived. The previous frame is the only
// state carried for differencing.
class StreamingEchoProcessor {
 public:
  StreamingEchoProcessor(const FmcwConfig& cfg, const CropSpec& crop, std::size_t n_channels,
                         std::optional<BandpassSpec> bandpass = std::nullopt,
                         int tx_start_offset = 0);

  // Appends one block of samples per channel (equal lengths).
  std::vector<StreamFrame> push(const std::vector<std::span<const double>>& block);
  // Treats the stream as ended: pads with zeros and emits the remaining frames.
  std::vector<StreamFrame> flush();

  std::size_t frames_emitted() const { return next_frame_; }
  std::size_t latency_samples() const { return lookahead_; }

 private:
  std::vector<StreamFrame> drain(bool final);
  StreamFrame process_frame(std::size_t f);

  FmcwConfig cfg_;
  CropSpec crop_;
  std::size_t n_channels_;
  std::vector<double> taps_;
  std::size_t lookahead_ = 0;
  std::size_t skip_;
  FrameCorrelator correlator_;
  // Raw samples per channel; index 0 is absolute sample `base_`.
  std::vector<std::vector<double>> raw_;
  std::size_t base_ = 0;
  std::size_t total_ = 0;
  std::size_t next_frame_ = 0;
  std::vector<double> prev_;
  bool flushed_ = false;
};

}  // namespace wsonar
