#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsonar/audio_io.hpp"
#include "wsonar/echo.hpp"
#include "wsonar/link.hpp"
#include "wsonar/pose.hpp"

namespace wsonar {

enum class Task { pose, wrist, interaction };

inline constexpr int kInteractionClasses = 12;
inline constexpr std::size_t kPoseWindow = 72;
inline constexpr std::size_t kInteractionWindow = 1050;

const char* to_string(Task task);
Task task_from_string(const std::string& name);
// 60 for pose, 3 for wrist, 12 for interaction.
std::size_t label_dim(Task task);
std::size_t default_window(Task task);

struct WindowSource {
  std::string participant_id;
  std::string session_id;
  std::size_t start_frame = 0;  // first frame of the window
  std::size_t end_frame = 0;    // one past the last frame
};

struct WindowSample {
  std::size_t frames = 0, pixels = 0, channels = 0;
  std::vector<float> tensor;  // frames x pixels x channels, row-major
  std::vector<float> label;   // 60 joint coordinates or the 3-d v9 vector
  int class_id = -1;          // interaction task only
  WindowSource source;

  float at(std::size_t f, std::size_t p, std::size_t c) const {
    return tensor[(f * pixels + p) * channels + c];
  }
};

// An interaction trial, in profile frames.
struct Trial {
  std::size_t begin_frame = 0;
  std::size_t end_frame = 0;  // exclusive
  int class_id = 0;
};

// A session after echo processing: the stacked profile plus frame-aligned
// labels. Frames flagged in `frame_mask` were touched by lost link data.
struct LabeledProfile {
  std::string participant_id;
  std::string session_id;
  EchoProfile profile;
  std::vector<std::optional<HandPose>> poses;  // per frame; empty for interaction sessions
  std::vector<Trial> trials;
  std::vector<std::uint8_t> frame_mask;  // per frame; empty means nothing masked
};

struct WindowOptions {
  Task task = Task::pose;
  std::size_t window = 0;  // 0 selects the task default
  std::size_t stride = 1;  // frames between pose/wrist windows
  // Frame range to draw windows from; end 0 means the whole profile.
  std::size_t begin_frame = 0;
  std::size_t end_frame = 0;
  // Scale each window to zero mean and unit variance.
  bool standardize = false;
};

// Pull-based window producer over one session. Pose and wrist windows take the
// label of their last frame; interaction windows cover one trial each,
// centered and zero-padded or truncated to the window length. Windows that
// touch a masked frame are skipped. A pose/wrist window whose last frame has
// no label throws label-gap.
class WindowStream {
 public:
  WindowStream(const LabeledProfile& session, const WindowOptions& opts);

  std::optional<WindowSample> next();
  std::size_t skipped_masked() const { return skipped_masked_; }

 private:
  bool masked(std::size_t begin, std::size_t end) const;
  WindowSample extract(std::size_t begin, std::size_t end, std::size_t src_begin) const;

  const LabeledProfile* session_;
  WindowOptions opts_;
  std::size_t window_;
  std::size_t begin_, end_;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> mask_prefix_;
  std::size_t skipped_masked_ = 0;
};

std::vector<WindowSample> make_windows(const LabeledProfile& session, const WindowOptions& opts);

struct AugmentSpec {
  int shift_pixels = 11;
  double gain_low = 0.95;
  double gain_high = 1.05;
  double gain_prob = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Shifts the pixel axis by a uniform draw in [-shift, +shift] with zero fill,
// then with probability gain_prob multiplies every element by its own factor
// drawn from [gain_low, gain_high]. The random stream depends only on the
// seed, the window source and `draw`, so results do not depend on the order
// windows are processed in.
WindowSample augment(const WindowSample& w, const AugmentSpec& spec, std::uint64_t draw = 0);

// Onset of the first broadband impulse (e.g. a finger snap) in seconds. The
// signal is low-passed below the sweep band and differenced against itself one
// period earlier, which cancels the chirp train's frame-periodic leakage. The
// result is cut into 1 ms blocks and the first block whose energy exceeds
// `threshold_ratio` times the median block energy is reported. Throws
// no-impulse-found.
struct SyncOptions {
  double lowpass_pass_hz = 17000.0;
  double lowpass_stop_hz = 19000.0;
  std::size_t period_samples = 600;  // 0 disables the differencing
  double block_s = 0.001;
  double threshold_ratio = 5.0;
};
double detect_sync(std::span<const double> audio, int rate_hz, const SyncOptions& opts = {});

// Relative sound-level calibration: noise whose RMS equals `reference_rms`
// counts as `reference_db` dB(A).
struct NoiseCalibration {
  double reference_rms = 1.0;
  double reference_db = 0.0;
};

struct NoiseScenario {
  const char* name;
  double level_db_a;
};
// Recorded-noise scenarios and their measured sound levels.
std::span<const NoiseScenario> noise_scenarios();
double scenario_level(const std::string& name);

struct NoiseInjection {
  Audio audio;
  double level_db = 0.0;
  double noise_gain = 0.0;  // factor applied to the noise samples
  std::string tag;
};

// Adds `noise` scaled so its RMS corresponds to `level_db` under the
// calibration. Noise channels are reused cyclically if there are fewer of them
// than audio channels. Without `loop` the noise must be at least as long as
// the audio.
NoiseInjection inject_noise(const Audio& test, const Audio& noise, double level_db,
                            const NoiseCalibration& cal, bool loop = false, std::string tag = {});

// Gaussian noise passed through a zero-phase FIR with the given band edges
// (low 0 for a low-pass), scaled to unit RMS.
Audio band_limited_noise(std::size_t n_samples, std::size_t channels, int rate_hz, double low_hz,
                         double high_hz, std::uint64_t seed);

struct SessionInfo {
  std::string participant_id;
  std::string session_id;
  std::size_t frames = 0;
};

struct LopoSplit {
  std::vector<std::size_t> train;      // indices into the session list
  std::vector<std::size_t> finetune;   // held-out participant, in session order
};

LopoSplit split_lopo(std::span<const SessionInfo> sessions, const std::string& held_out);

struct FrameRange {
  std::size_t session = 0;  // index into the session list
  std::size_t begin_frame = 0;
  std::size_t end_frame = 0;
};

struct FinetunePlan {
  std::vector<FrameRange> finetune;
  std::vector<std::size_t> test;
};

// The last `test_sessions` candidates are held for testing. The fine-tune set
// takes `budget_sessions` from the front of the rest; a fractional part takes
// that share of the next session's frames from its start. Larger budgets
// always contain smaller ones.
FinetunePlan finetune_budget(std::span<const SessionInfo> sessions, std::span<const std::size_t> candidates,
                             double budget_sessions, std::size_t test_sessions = 2);

struct GapFilledAudio {
  Audio audio;
  std::vector<std::uint8_t> mask;  // per sample, 1 = zero-filled
  std::size_t lost_packets = 0;
};

GapFilledAudio zero_fill_gaps(std::span<const LinkPacket> packets, const LinkConfig& cfg,
                              std::optional<std::size_t> expected_samples = std::nullopt);

// Marks every frame whose samples, widened by `guard_samples` on each side,
// include a masked sample. The frame after a masked one is flagged as well
// because its differential depends on it.
std::vector<std::uint8_t> frame_mask(std::span<const std::uint8_t> sample_mask, int frame_len,
                                     std::size_t n_frames, std::size_t tx_start_offset = 0,
                                     std::size_t guard_samples = 0);

struct ProcessOptions {
  FmcwConfig fmcw{};
  CropSpec crop{};
  BandpassSpec bandpass{};
  bool apply_bandpass = true;
  int tx_start_offset = 0;
};

// Band-pass, correlate and stack original + differential channels.
EchoProfile process_audio(const Audio& audio, const ProcessOptions& opts);

// Guard width implied by the band-pass in `opts` (zero when disabled).
std::size_t filter_guard_samples(const ProcessOptions& opts);

// Writes one ECHP file per window plus labels.jsonl describing them.
std::size_t export_windows(const std::filesystem::path& dir, std::span<const WindowSample> windows,
                           double pixel_distance_m);

}  // namespace wsonar
