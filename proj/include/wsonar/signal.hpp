#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace wsonar {

/// Chirp and frame parameters shared by every stage of the pipeline.
///
/// One frame is one linear sweep from `sweep_start_hz` to `sweep_end_hz`.
/// The defaults give 600-sample (12 ms) frames at 50 kHz sweeping 20-24 kHz.
struct FmcwConfig {
  int sample_rate_hz = 50000;
  double sweep_start_hz = 20000.0;
  double sweep_end_hz = 24000.0;
  int frame_len_samples = 600;
  double amplitude = 1.0;
  // Raised-cosine fade length at both frame edges; 0 disables the taper.
  int taper_samples = 0;

  void validate() const;
  double frame_duration_s() const {
    return static_cast<double>(frame_len_samples) / sample_rate_hz;
  }
};

struct BandpassSpec {
  double low_hz = 20000.0;
  double high_hz = 24000.0;
  double stopband_attenuation_db = 60.0;
  double transition_hz = 1000.0;

  void validate(int rate_hz) const;
};

std::vector<double> gen_chirp(const FmcwConfig& cfg);
std::vector<double> gen_tx_stream(const FmcwConfig& cfg, int n_frames);

// Kaiser-window FIR designs. Taps are symmetric with odd length, so the group
// delay is exactly (size - 1) / 2 samples.
std::vector<double> design_bandpass(const BandpassSpec& spec, int rate_hz);
std::vector<double> design_lowpass(double pass_edge_hz, double stop_edge_hz,
                                   double attenuation_db, int rate_hz);

enum class EdgeMode {
  zero,      // samples outside the signal are zero
  periodic,  // signal is extended by repeating it with a given period
};

// Zero-phase FIR filtering: convolves with `taps` and removes the group delay
// so the output is time-aligned with the input and has the same length.
std::vector<double> filter_zero_phase(std::span<const double> x, std::span<const double> taps,
                                      EdgeMode edges = EdgeMode::zero, std::size_t period = 0);

std::vector<double> bandpass(std::span<const double> x, const BandpassSpec& spec, int rate_hz,
                             EdgeMode edges = EdgeMode::zero, std::size_t period = 0);

double rms(std::span<const double> x);
double energy(std::span<const double> x);

}  // namespace wsonar
