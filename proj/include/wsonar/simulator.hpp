#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <vector>

#include "wsonar/audio_io.hpp"
#include "wsonar/echo.hpp"
#include "wsonar/pose.hpp"
#include "wsonar/signal.hpp"

namespace wsonar {

// Piecewise-linear distance over time; held constant outside the knots.
struct Trajectory {
  std::vector<std::array<double, 2>> knots;  // (t seconds, distance meters), t ascending

  static Trajectory constant(double distance_m) { return {{{0.0, distance_m}}}; }
  double at(double t) const;
};

struct Reflector {
  Trajectory distance_m;
  double gain = 1.0;
  // Extra one-way path per microphone; empty means zero for every channel.
  std::vector<double> channel_offsets_m;
  // Per-microphone gain multiplier; empty means 1 for every channel.
  std::vector<double> channel_gains;
};

struct ReflectorScene {
  std::vector<Reflector> reflectors;
  double direct_path_gain = 0.0;
  double noise_rms = 0.0;
  std::uint64_t seed = 0;
  int n_channels = 2;

  void validate() const;
};

ReflectorScene scene_from_json(const nlohmann::json& doc);
nlohmann::json scene_to_json(const ReflectorScene& scene);

struct RenderOptions {
  int sinc_half_width = 64;    // taps on each side of the interpolation kernel
  int fractional_steps = 512;  // table resolution of the fractional delay
  double kaiser_beta = 9.0;
  double speed_of_sound = kSpeedOfSound;
};

// The transmitted chirp, emitted continuously (also before the capture
// window), tabulated at fractional delays by Kaiser-windowed sinc
// interpolation. Building it is the expensive part of rendering, so it can be
// reused across renders with the same configuration.
class DelayedChirp {
 public:
  DelayedChirp(const FmcwConfig& cfg, const RenderOptions& opts = {});

  // tx(n - delay) for sample index n and a delay in samples (delay >= 0).
  double at(std::int64_t n, double delay_samples) const;

  const FmcwConfig& config() const { return cfg_; }
  const RenderOptions& options() const { return opts_; }

 private:
  FmcwConfig cfg_;
  RenderOptions opts_;
  std::size_t n_;
  std::size_t steps_;
  std::vector<double> table_;  // (steps + 1) rows of n samples
};

// rx_c[n] = g_direct * tx[n] + sum_r g_r * tx(n - 2 (d_r(t) + off_rc) fs / c) + noise.
Audio render(const ReflectorScene& scene, const FmcwConfig& cfg, int n_frames,
             const RenderOptions& opts = {});
Audio render(const ReflectorScene& scene, const DelayedChirp& tx, int n_frames);

/// Synthetic hand: reflector distances are an affine function of per-finger
/// flexion parameters in [0, 1], and the 21-joint pose interpolates each
/// finger between an open and a curled posture with the same parameters.
struct HandSceneModel {
  Eigen::VectorXd base_distance_m;  // per reflector
  Eigen::MatrixXd mapping;          // reflectors x parameters, meters per unit flexion
  std::vector<double> gains;        // per reflector
  std::vector<std::vector<double>> channel_offsets_m;  // per reflector, per channel
  std::vector<std::vector<double>> channel_gains;      // per reflector, per channel
  int n_channels = 2;
  double direct_path_gain = 0.3;
  double noise_rms = 0.0;
  HandPose open_hand;
  HandPose closed_hand;
  // Finger index (0..4) that drives each parameter.
  std::vector<int> param_finger;

  std::size_t n_params() const { return static_cast<std::size_t>(mapping.cols()); }
  std::size_t n_reflectors() const { return static_cast<std::size_t>(mapping.rows()); }

  // Five flexion parameters, two microphones on opposite sides of the wrist.
  static HandSceneModel standard();

  void validate() const;
  void check_params(std::span<const double> theta) const;
  Eigen::VectorXd distances(std::span<const double> theta) const;
  HandPose pose(std::span<const double> theta) const;
  // Least-squares inverse of pose(): the flexion parameters whose posture is
  // closest to `pose` (unclamped).
  std::vector<double> estimate_params(const HandPose& pose) const;
};

// Per-user variation in hand geometry and reflectivity.
// A reflector offset of d turns the echo's carrier phase by 4*pi*d/wavelength.
struct UserJitter {
  double gain_spread = 0.10;        // relative, uniform +-
  double offset_spread_m = 0.0001;  // per reflector, uniform +-
  double span_spread = 0.08;        // relative scale of the mapping, uniform +-
};

HandSceneModel jitter_user(const HandSceneModel& model, std::uint64_t seed, const UserJitter& jitter = {});
// Moves every reflector by the same distance, e.g. after the band is remounted.
HandSceneModel shift_mount(const HandSceneModel& model, double offset_m);

struct PoseSequence {
  Audio audio;
  std::vector<std::vector<double>> params;  // per frame, sampled at frame end
  std::vector<HandPose> poses;              // per frame
};

// Keyframe k is reached at k * frames_per_pose frames; distances move
// linearly between keyframes and hold after the last one.
PoseSequence render_pose_sequence(const HandSceneModel& model,
                                  const std::vector<std::vector<double>>& keyframes,
                                  const DelayedChirp& tx, int frames_per_pose, std::uint64_t seed);
PoseSequence render_pose_sequence(const HandSceneModel& model,
                                  const std::vector<std::vector<double>>& keyframes,
                                  const FmcwConfig& cfg, int frames_per_pose, std::uint64_t seed);

}  // namespace wsonar
