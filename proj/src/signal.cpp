#include "wsonar/signal.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "wsonar/error.hpp"
#include "wsonar/fft.hpp"

namespace wsonar {
namespace {

// Kaiser's length estimate is approximate; design slightly past the target.
constexpr double kDesignMarginDb = 6.0;

double kaiser_beta(double atten_db) {
  if (atten_db > 50.0) return 0.1102 * (atten_db - 8.7);
  if (atten_db >= 21.0)
    return 0.5842 * std::pow(atten_db - 21.0, 0.4) + 0.07886 * (atten_db - 21.0);
  return 0.0;
}

std::size_t kaiser_length(double atten_db, double transition_hz, int rate_hz) {
  const double dw = 2.0 * std::numbers::pi * transition_hz / rate_hz;
  auto order = static_cast<std::size_t>(std::ceil((atten_db - 7.95) / (2.285 * dw)));
  std::size_t len = order + 1;
  if (len % 2 == 0) ++len;
  return std::max<std::size_t>(len, 3);
}

std::vector<double> kaiser_window(std::size_t len, double beta) {
  std::vector<double> w(len);
  const double half = (static_cast<double>(len) - 1.0) / 2.0;
  const double denom = std::cyl_bessel_i(0.0, beta);
  for (std::size_t i = 0; i < len; ++i) {
    const double r = (static_cast<double>(i) - half) / half;
    w[i] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

// Ideal lowpass impulse response with cutoff fc (cycles/sample) at offset n.
double ideal_lowpass(double fc, double n) {
  if (fc >= 0.5) return n == 0.0 ? 1.0 : 0.0;
  if (n == 0.0) return 2.0 * fc;
  return std::sin(2.0 * std::numbers::pi * fc * n) / (std::numbers::pi * n);
}

}  // namespace

void FmcwConfig::validate() const {
  require(sample_rate_hz > 0, Errc::invalid_config, "sample_rate_hz must be positive");
  require(frame_len_samples >= 2, Errc::invalid_config, "frame_len_samples must be >= 2");
  require(sweep_start_hz > 0.0, Errc::invalid_config, "sweep_start_hz must be positive");
  // start == end is accepted and produces a pure tone.
  require(sweep_start_hz <= sweep_end_hz, Errc::invalid_config,
          "sweep_start_hz must not exceed sweep_end_hz");
  require(sweep_end_hz < sample_rate_hz / 2.0, Errc::invalid_config,
          "sweep_end_hz must be below Nyquist");
  require(amplitude > 0.0 && amplitude <= 1.0, Errc::invalid_config, "amplitude must be in (0,1]");
  require(taper_samples >= 0 && 2 * taper_samples <= frame_len_samples, Errc::invalid_config,
          "taper_samples must fit twice in a frame");
}

void BandpassSpec::validate(int rate_hz) const {
  require(low_hz > 0.0 && low_hz < high_hz, Errc::invalid_spec, "need 0 < low_hz < high_hz");
  require(stopband_attenuation_db > 0.0, Errc::invalid_spec, "attenuation must be positive");
  require(transition_hz > 0.0 && transition_hz / 2.0 < low_hz, Errc::invalid_spec,
          "transition_hz must be positive and below 2*low_hz");
  require(rate_hz > 2.0 * high_hz, Errc::invalid_spec, "rate must exceed 2*high_hz");
}

std::vector<double> gen_chirp(const FmcwConfig& cfg) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.frame_len_samples);
  const double fs = cfg.sample_rate_hz;
  const double duration = static_cast<double>(n) / fs;
  const double sweep_rate = (cfg.sweep_end_hz - cfg.sweep_start_hz) / duration;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double phase =
        2.0 * std::numbers::pi * (cfg.sweep_start_hz * t + 0.5 * sweep_rate * t * t);
    out[i] = cfg.amplitude * std::cos(phase);
  }
  const auto taper = static_cast<std::size_t>(cfg.taper_samples);
  for (std::size_t i = 0; i < taper; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) /
                                          static_cast<double>(taper));
    out[i] *= g;
    out[n - 1 - i] *= g;
  }
  return out;
}

std::vector<double> gen_tx_stream(const FmcwConfig& cfg, int n_frames) {
  require(n_frames >= 1, Errc::invalid_config, "n_frames must be >= 1");
  const auto chirp = gen_chirp(cfg);
  std::vector<double> out;
  out.reserve(chirp.size() * static_cast<std::size_t>(n_frames));
  for (int f = 0; f < n_frames; ++f) out.insert(out.end(), chirp.begin(), chirp.end());
  return out;
}

std::vector<double> design_bandpass(const BandpassSpec& spec, int rate_hz) {
  spec.validate(rate_hz);
  const double atten = spec.stopband_attenuation_db + kDesignMarginDb;
  const std::size_t len = kaiser_length(atten, spec.transition_hz, rate_hz);
  const auto w = kaiser_window(len, kaiser_beta(atten));
  const double f1 = (spec.low_hz - spec.transition_hz / 2.0) / rate_hz;
  const double f2 = std::min(0.5, (spec.high_hz + spec.transition_hz / 2.0) / rate_hz);
  const double half = (static_cast<double>(len) - 1.0) / 2.0;
  std::vector<double> taps(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double n = static_cast<double>(i) - half;
    taps[i] = (ideal_lowpass(f2, n) - ideal_lowpass(f1, n)) * w[i];
  }
  return taps;
}

std::vector<double> design_lowpass(double pass_edge_hz, double stop_edge_hz,
                                   double attenuation_db, int rate_hz) {
  require(pass_edge_hz > 0.0 && pass_edge_hz < stop_edge_hz && stop_edge_hz <= rate_hz / 2.0,
          Errc::invalid_spec, "lowpass edges must satisfy 0 < pass < stop <= Nyquist");
  require(attenuation_db > 0.0, Errc::invalid_spec, "attenuation must be positive");
  const double atten = attenuation_db + kDesignMarginDb;
  const std::size_t len = kaiser_length(atten, stop_edge_hz - pass_edge_hz, rate_hz);
  const auto w = kaiser_window(len, kaiser_beta(atten));
  const double fc = 0.5 * (pass_edge_hz + stop_edge_hz) / rate_hz;
  const double half = (static_cast<double>(len) - 1.0) / 2.0;
  std::vector<double> taps(len);
  for (std::size_t i = 0; i < len; ++i) taps[i] = ideal_lowpass(fc, static_cast<double>(i) - half) * w[i];
  return taps;
}

std::vector<double> filter_zero_phase(std::span<const double> x, std::span<const double> taps,
                                      EdgeMode edges, std::size_t period) {
  require(taps.size() % 2 == 1, Errc::invalid_spec, "zero-phase filter needs odd tap count");
  if (x.empty()) return {};
  const std::size_t delay = (taps.size() - 1) / 2;
  if (edges == EdgeMode::zero) {
    const auto full = fft_convolve(x, taps);
    return {full.begin() + static_cast<std::ptrdiff_t>(delay),
            full.begin() + static_cast<std::ptrdiff_t>(delay + x.size())};
  }
  require(period >= 1 && period <= x.size(), Errc::invalid_spec,
          "periodic edges need 1 <= period <= signal length");
  const auto len = static_cast<std::ptrdiff_t>(x.size());
  const auto p = static_cast<std::ptrdiff_t>(period);
  const auto d = static_cast<std::ptrdiff_t>(delay);
  std::vector<double> ext(x.size() + 2 * delay);
  for (std::ptrdiff_t i = -d; i < len + d; ++i) {
    std::ptrdiff_t j = i;
    while (j < 0) j += p;
    while (j >= len) j -= p;
    ext[static_cast<std::size_t>(i + d)] = x[static_cast<std::size_t>(j)];
  }
  const auto full = fft_convolve(ext, taps);
  return {full.begin() + 2 * d, full.begin() + 2 * d + len};
}

std::vector<double> bandpass(std::span<const double> x, const BandpassSpec& spec, int rate_hz,
                             EdgeMode edges, std::size_t period) {
  const auto taps = design_bandpass(spec, rate_hz);
  return filter_zero_phase(x, taps, edges, period);
}

double energy(std::span<const double> x) {
  return std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::sqrt(energy(x) / static_cast<double>(x.size()));
}

}  // namespace wsonar
