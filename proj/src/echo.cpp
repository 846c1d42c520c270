#include "wsonar/echo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wsonar/error.hpp"

namespace wsonar {

void CropSpec::validate(int frame_len_samples) const {
  require(start_pixel >= 0 && n_pixels >= 1 && start_pixel + n_pixels <= frame_len_samples,
          Errc::crop_out_of_range,
          "crop must satisfy start >= 0, n >= 1, start + n <= frame length");
}

EchoProfile::EchoProfile(std::size_t frames, std::size_t pixels, std::size_t channels,
                         double pixel_distance_m, ProfileKind kind)
    : frames_(frames),
      pixels_(pixels),
      channels_(channels),
      pixel_distance_m_(pixel_distance_m),
      kind_(kind),
      data_(frames * pixels * channels, 0.0) {
  require(pixel_distance_m > 0.0, Errc::invalid_config, "pixel distance must be positive");
}

double pixel_distance_m(int sample_rate_hz, double speed_of_sound) {
  require(sample_rate_hz > 0 && speed_of_sound > 0.0, Errc::invalid_config,
          "rate and speed of sound must be positive");
  return speed_of_sound / (2.0 * sample_rate_hz);
}

std::vector<double> echo_frame(std::span<const double> rx_frame, std::span<const double> tx_ref) {
  require(rx_frame.size() == tx_ref.size() && !tx_ref.empty(), Errc::length_mismatch,
          "rx frame and tx reference must have the same nonzero length");
  const std::size_t n = tx_ref.size();
  RealFft fft(fft_friendly_size(2 * n - 1));
  std::vector<std::complex<double>> a(fft.bins()), b(fft.bins());
  fft.forward(rx_frame, a);
  fft.forward(tx_ref, b);
  for (std::size_t k = 0; k < a.size(); ++k) a[k] *= std::conj(b[k]);
  std::vector<double> full(fft.size());
  fft.inverse(a, full);
  const double scale = 1.0 / static_cast<double>(fft.size());
  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) out[p] = full[p] * scale;
  return out;
}

FrameCorrelator::FrameCorrelator(std::span<const double> tx_ref)
    : n_(tx_ref.size()), fft_(tx_ref.size()), buf_(tx_ref.size()) {
  require(n_ >= 2, Errc::length_mismatch, "reference must have at least 2 samples");
  ref_conj_.resize(fft_.bins());
  spec_.resize(fft_.bins());
  fft_.forward(tx_ref, ref_conj_);
  const double scale = 1.0 / static_cast<double>(n_);
  for (auto& v : ref_conj_) v = std::conj(v) * scale;
}

void FrameCorrelator::correlate(std::span<const double> rx_frame, std::span<double> out) {
  require(rx_frame.size() == n_ && out.size() == n_, Errc::length_mismatch,
          "frame length differs from reference");
  fft_.forward(rx_frame, spec_);
  for (std::size_t k = 0; k < spec_.size(); ++k) spec_[k] *= ref_conj_[k];
  fft_.inverse(spec_, out);
}

void FrameCorrelator::envelope(std::span<const double> rx_frame, std::span<double> out) {
  require(rx_frame.size() == n_ && out.size() == n_, Errc::length_mismatch,
          "frame length differs from reference");
  fft_.forward(rx_frame, spec_);
  for (std::size_t k = 0; k < spec_.size(); ++k) spec_[k] *= ref_conj_[k];
  // Hilbert transform: -j on positive frequencies, DC and Nyquist dropped.
  quad_.resize(spec_.size());
  for (std::size_t k = 0; k < spec_.size(); ++k) quad_[k] = std::complex<double>(spec_[k].imag(), -spec_[k].real());
  quad_.front() = 0.0;
  if (n_ % 2 == 0) quad_.back() = 0.0;
  fft_.inverse(spec_, out);
  fft_.inverse(quad_, buf_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = std::hypot(out[i], buf_[i]);
}

namespace {

EchoProfile correlate_frames(const std::vector<std::vector<double>>& rx, const FmcwConfig& cfg,
                             const CropSpec& crop, const ProfileOptions& opts, bool envelope) {
  cfg.validate();
  crop.validate(cfg.frame_len_samples);
  require(!rx.empty(), Errc::shape_mismatch, "no receive channels");
  require(opts.tx_start_offset >= 0, Errc::not_frame_aligned, "negative tx start offset");
  const std::size_t n = static_cast<std::size_t>(cfg.frame_len_samples);
  const std::size_t len = rx.front().size();
  const auto offset = static_cast<std::size_t>(opts.tx_start_offset);
  for (const auto& ch : rx)
    require(ch.size() == len, Errc::shape_mismatch, "receive channels differ in length");
  if (len < offset + n || (len - offset) % n != 0)
    fail(Errc::not_frame_aligned, "received length " + std::to_string(len) + " minus offset " +
                                      std::to_string(offset) + " is not a whole number of " +
                                      std::to_string(n) + "-sample frames");
  const std::size_t frames = (len - offset) / n;
  const auto start = static_cast<std::size_t>(crop.start_pixel);
  const auto pixels = static_cast<std::size_t>(crop.n_pixels);

  const auto tx = gen_chirp(cfg);
  FrameCorrelator corr(tx);
  EchoProfile out(frames, pixels, rx.size(), pixel_distance_m(cfg.sample_rate_hz, opts.speed_of_sound),
                  envelope ? ProfileKind::envelope : ProfileKind::original);
  std::vector<double> lags(n);
  for (std::size_t c = 0; c < rx.size(); ++c) {
    std::vector<double> filtered;
    std::span<const double> src = rx[c];
    if (opts.apply_bandpass) {
      // Continuous emission makes the received stream frame-periodic in steady
      // state, so the filter edges are extended periodically rather than zeroed.
      filtered = bandpass(rx[c], opts.bandpass, cfg.sample_rate_hz, EdgeMode::periodic, n);
      src = filtered;
    }
    for (std::size_t f = 0; f < frames; ++f) {
      if (envelope)
        corr.envelope(src.subspan(offset + f * n, n), lags);
      else
        corr.correlate(src.subspan(offset + f * n, n), lags);
      for (std::size_t p = 0; p < pixels; ++p) out.at(f, p, c) = lags[start + p];
    }
  }
  return out;
}

}  // namespace

EchoProfile echo_profile(const std::vector<std::vector<double>>& rx, const FmcwConfig& cfg,
                         const CropSpec& crop, const ProfileOptions& opts) {
  return correlate_frames(rx, cfg, crop, opts, false);
}

EchoProfile envelope_profile(const std::vector<std::vector<double>>& rx, const FmcwConfig& cfg,
                             const CropSpec& crop, const ProfileOptions& opts) {
  return correlate_frames(rx, cfg, crop, opts, true);
}

std::size_t peak_pixel(const EchoProfile& profile, std::size_t frame, std::size_t channel) {
  require(frame < profile.frames() && channel < profile.channels() && profile.pixels() > 0,
          Errc::shape_mismatch, "peak_pixel index out of range");
  std::size_t best = 0;
  for (std::size_t p = 1; p < profile.pixels(); ++p)
    if (std::abs(profile.at(frame, p, channel)) > std::abs(profile.at(frame, best, channel))) best = p;
  return best;
}

EchoProfile differential(const EchoProfile& profile) {
  require(profile.kind() == ProfileKind::original, Errc::wrong_kind,
          "differential needs an original profile");
  require(profile.frames() >= 2, Errc::shape_mismatch, "differential needs at least 2 frames");
  EchoProfile out(profile.frames(), profile.pixels(), profile.channels(), profile.pixel_distance_m(),
                  ProfileKind::differential);
  const std::size_t stride = profile.pixels() * profile.channels();
  auto in = profile.data();
  auto dst = out.data();
  for (std::size_t i = stride; i < in.size(); ++i) dst[i] = in[i] - in[i - stride];
  return out;
}

EchoProfile crop_profile(const EchoProfile& profile, const CropSpec& crop) {
  crop.validate(static_cast<int>(profile.pixels()));
  EchoProfile out(profile.frames(), static_cast<std::size_t>(crop.n_pixels), profile.channels(),
                  profile.pixel_distance_m(), profile.kind());
  const auto start = static_cast<std::size_t>(crop.start_pixel);
  for (std::size_t f = 0; f < out.frames(); ++f)
    for (std::size_t p = 0; p < out.pixels(); ++p)
      for (std::size_t c = 0; c < out.channels(); ++c) out.at(f, p, c) = profile.at(f, start + p, c);
  return out;
}

EchoProfile stack_channels(const EchoProfile& orig, const EchoProfile& diff) {
  require(orig.same_shape(diff), Errc::shape_mismatch,
          "original and differential profiles differ in shape");
  const std::size_t nc = orig.channels();
  EchoProfile out(orig.frames(), orig.pixels(), 2 * nc, orig.pixel_distance_m(), ProfileKind::stacked);
  for (std::size_t f = 0; f < orig.frames(); ++f)
    for (std::size_t p = 0; p < orig.pixels(); ++p)
      for (std::size_t c = 0; c < nc; ++c) {
        out.at(f, p, c) = orig.at(f, p, c);
        out.at(f, p, nc + c) = diff.at(f, p, c);
      }
  return out;
}

StreamingEchoProcessor::StreamingEchoProcessor(const FmcwConfig& cfg, const CropSpec& crop,
                                               std::size_t n_channels,
                                               std::optional<BandpassSpec> bandpass_spec,
                                               int tx_start_offset)
    : cfg_(cfg),
      crop_(crop),
      n_channels_(n_channels),
      skip_(static_cast<std::size_t>(std::max(0, tx_start_offset))),
      correlator_(gen_chirp(cfg)),
      raw_(n_channels) {
  crop.validate(cfg.frame_len_samples);
  require(n_channels >= 1, Errc::shape_mismatch, "need at least one channel");
  require(tx_start_offset >= 0, Errc::not_frame_aligned, "negative tx start offset");
  if (bandpass_spec) {
    taps_ = design_bandpass(*bandpass_spec, cfg.sample_rate_hz);
    lookahead_ = (taps_.size() - 1) / 2;
  }
}

std::vector<StreamFrame> StreamingEchoProcessor::push(
    const std::vector<std::span<const double>>& block) {
  require(!flushed_, Errc::invalid_config, "stream already flushed");
  require(block.size() == n_channels_, Errc::shape_mismatch, "block channel count");
  for (const auto& ch : block)
    require(ch.size() == block.front().size(), Errc::shape_mismatch, "block channels differ in length");
  for (std::size_t c = 0; c < n_channels_; ++c)
    raw_[c].insert(raw_[c].end(), block[c].begin(), block[c].end());
  total_ += block.front().size();
  return drain(false);
}

std::vector<StreamFrame> StreamingEchoProcessor::flush() {
  flushed_ = true;
  return drain(true);
}

std::vector<StreamFrame> StreamingEchoProcessor::drain(bool final) {
  const std::size_t n = static_cast<std::size_t>(cfg_.frame_len_samples);
  std::vector<StreamFrame> out;
  for (;;) {
    const std::size_t frame_end = skip_ + (next_frame_ + 1) * n;
    const std::size_t needed = final ? frame_end : frame_end + lookahead_;
    if (total_ < needed) break;
    out.push_back(process_frame(next_frame_));
    ++next_frame_;
    // Keep only what the next frame's filter window can still reach.
    const std::size_t keep_from = skip_ + next_frame_ * n;
    const std::size_t drop_to = keep_from > lookahead_ ? keep_from - lookahead_ : 0;
    if (drop_to > base_) {
      const std::size_t k = std::min(drop_to - base_, raw_.front().size());
      for (auto& ch : raw_) ch.erase(ch.begin(), ch.begin() + static_cast<std::ptrdiff_t>(k));
      base_ += k;
    }
  }
  return out;
}

StreamFrame StreamingEchoProcessor::process_frame(std::size_t f) {
  const std::size_t n = static_cast<std::size_t>(cfg_.frame_len_samples);
  const std::size_t pixels = static_cast<std::size_t>(crop_.n_pixels);
  const std::size_t start = static_cast<std::size_t>(crop_.start_pixel);
  const std::size_t first = skip_ + f * n;
  auto sample = [&](std::size_t c, std::ptrdiff_t abs) -> double {
    if (abs < static_cast<std::ptrdiff_t>(base_) || abs >= static_cast<std::ptrdiff_t>(total_)) return 0.0;
    return raw_[c][static_cast<std::size_t>(abs) - base_];
  };
  StreamFrame out;
  out.index = f;
  out.original.assign(pixels * n_channels_, 0.0);
  std::vector<double> frame(n), lags(n);
  for (std::size_t c = 0; c < n_channels_; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto abs = static_cast<std::ptrdiff_t>(first + i);
      if (taps_.empty()) {
        frame[i] = sample(c, abs);
        continue;
      }
      double acc = 0.0;
      const auto d = static_cast<std::ptrdiff_t>(lookahead_);
      for (std::size_t j = 0; j < taps_.size(); ++j)
        acc += taps_[j] * sample(c, abs + d - static_cast<std::ptrdiff_t>(j));
      frame[i] = acc;
    }
    correlator_.correlate(frame, lags);
    for (std::size_t p = 0; p < pixels; ++p) out.original[p * n_channels_ + c] = lags[start + p];
  }
  out.differential.assign(out.original.size(), 0.0);
  if (!prev_.empty())
    for (std::size_t i = 0; i < out.original.size(); ++i) out.differential[i] = out.original[i] - prev_[i];
  prev_ = out.original;
  return out;
}

}  // namespace wsonar
