#include "wsonar/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "wsonar/echo_io.hpp"
#include "wsonar/error.hpp"
#include "wsonar/signal.hpp"

namespace wsonar {

const char* to_string(Task task) {
  switch (task) {
    case Task::pose: return "pose";
    case Task::wrist: return "wrist";
    case Task::interaction: return "interaction";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  if (name == "pose") return Task::pose;
  if (name == "wrist") return Task::wrist;
  if (name == "interaction") return Task::interaction;
  fail(Errc::invalid_config, "unknown task '" + name + "'");
}

std::size_t label_dim(Task task) {
  switch (task) {
    case Task::pose: return 60;
    case Task::wrist: return 3;
    case Task::interaction: return kInteractionClasses;
  }
  return 0;
}

std::size_t default_window(Task task) {
  return task == Task::interaction ? kInteractionWindow : kPoseWindow;
}

WindowStream::WindowStream(const LabeledProfile& session, const WindowOptions& opts)
    : session_(&session), opts_(opts) {
  window_ = opts.window ? opts.window : default_window(opts.task);
  require(opts.stride >= 1, Errc::invalid_config, "window stride must be >= 1");
  const std::size_t frames = session.profile.frames();
  begin_ = opts.begin_frame;
  end_ = opts.end_frame ? opts.end_frame : frames;
  require(begin_ <= end_ && end_ <= frames, Errc::invalid_config, "window frame range outside the profile");
  require(session.frame_mask.empty() || session.frame_mask.size() == frames, Errc::shape_mismatch,
          "frame mask length differs from the profile");
  if (opts.task == Task::interaction) {
    require(!session.trials.empty() || session.poses.empty(), Errc::task_mismatch,
            "interaction windows need trial labels");
  } else {
    require(session.poses.size() == frames, Errc::task_mismatch, "pose labels must cover every frame");
  }
  mask_prefix_.assign(frames + 1, 0);
  for (std::size_t f = 0; f < frames; ++f)
    mask_prefix_[f + 1] = mask_prefix_[f] + (session.frame_mask.empty() ? 0 : session.frame_mask[f] != 0);
  cursor_ = opts.task == Task::interaction ? 0 : begin_;
}

bool WindowStream::masked(std::size_t begin, std::size_t end) const {
  return mask_prefix_[end] != mask_prefix_[begin];
}

WindowSample WindowStream::extract(std::size_t begin, std::size_t end, std::size_t dst_offset) const {
  const auto& prof = session_->profile;
  WindowSample w;
  w.frames = window_;
  w.pixels = prof.pixels();
  w.channels = prof.channels();
  w.tensor.assign(w.frames * w.pixels * w.channels, 0.0f);
  const std::size_t row = w.pixels * w.channels;
  for (std::size_t f = begin; f < end; ++f) {
    const auto src = prof.frame(f);
    std::transform(src.begin(), src.end(), w.tensor.begin() + static_cast<std::ptrdiff_t>((dst_offset + f - begin) * row),
                   [](double v) { return static_cast<float>(v); });
  }
  if (opts_.standardize && !w.tensor.empty()) {
    double mean = 0.0, sq = 0.0;
    for (float v : w.tensor) mean += v;
    mean /= static_cast<double>(w.tensor.size());
    for (float v : w.tensor) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(w.tensor.size()));
    const double inv = sd > 0.0 ? 1.0 / sd : 0.0;
    for (float& v : w.tensor) v = static_cast<float>((v - mean) * inv);
  }
  w.source = {session_->participant_id, session_->session_id, begin, end};
  return w;
}

std::optional<WindowSample> WindowStream::next() {
  const std::size_t frames = session_->profile.frames();
  if (opts_.task == Task::interaction) {
    while (cursor_ < session_->trials.size()) {
      const Trial& t = session_->trials[cursor_++];
      require(t.begin_frame < t.end_frame && t.end_frame <= frames, Errc::label_gap,
              "trial lies outside the recorded frames");
      require(t.class_id >= 0 && t.class_id < kInteractionClasses, Errc::invalid_config,
              "interaction class out of range");
      // Center the trial in the window, truncating symmetrically when longer.
      const std::size_t len = t.end_frame - t.begin_frame;
      std::size_t begin = t.begin_frame, end = t.end_frame, dst = 0;
      if (len > window_) {
        begin += (len - window_) / 2;
        end = begin + window_;
      } else {
        dst = (window_ - len) / 2;
      }
      if (begin < begin_ || end > end_) continue;
      if (masked(begin, end)) {
        ++skipped_masked_;
        continue;
      }
      WindowSample w = extract(begin, end, dst);
      w.class_id = t.class_id;
      return w;
    }
    return std::nullopt;
  }
  while (cursor_ + window_ <= end_) {
    const std::size_t begin = cursor_, end = cursor_ + window_;
    cursor_ += opts_.stride;
    if (masked(begin, end)) {
      ++skipped_masked_;
      continue;
    }
    const auto& pose = session_->poses[end - 1];
    if (!pose)
      fail(Errc::label_gap, "no label for frame " + std::to_string(end - 1) + " of session " +
                                session_->session_id);
    WindowSample w = extract(begin, end, 0);
    if (opts_.task == Task::pose) {
      w.label = pose_to_label60(*pose);
    } else {
      const Vec3 v9 = palm_frame(*pose).v9;
      w.label = {static_cast<float>(v9.x()), static_cast<float>(v9.y()), static_cast<float>(v9.z())};
    }
    return w;
  }
  return std::nullopt;
}

std::vector<WindowSample> make_windows(const LabeledProfile& session, const WindowOptions& opts) {
  WindowStream stream(session, opts);
  std::vector<WindowSample> out;
  while (auto w = stream.next()) out.push_back(std::move(*w));
  return out;
}

void AugmentSpec::validate() const {
  require(shift_pixels >= 0, Errc::invalid_config, "shift_pixels must be >= 0");
  require(gain_low <= gain_high, Errc::invalid_config, "gain_low must not exceed gain_high");
  require(gain_prob >= 0.0 && gain_prob <= 1.0, Errc::invalid_config, "gain_prob must be in [0,1]");
}

WindowSample augment(const WindowSample& w, const AugmentSpec& spec, std::uint64_t draw) {
  spec.validate();
  const std::hash<std::string> h;
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(h(w.source.participant_id)),
                    static_cast<std::uint32_t>(h(w.source.session_id)),
                    static_cast<std::uint32_t>(w.source.start_frame), static_cast<std::uint32_t>(draw),
                    static_cast<std::uint32_t>(draw >> 32)};
  std::mt19937_64 rng(seq);
  WindowSample out = w;
  const int shift = std::uniform_int_distribution<int>(-spec.shift_pixels, spec.shift_pixels)(rng);
  const auto np = static_cast<std::ptrdiff_t>(w.pixels);
  if (shift != 0) {
    std::fill(out.tensor.begin(), out.tensor.end(), 0.0f);
    for (std::size_t f = 0; f < w.frames; ++f)
      for (std::ptrdiff_t p = 0; p < np; ++p) {
        const std::ptrdiff_t src = p - shift;
        if (src < 0 || src >= np) continue;
        for (std::size_t c = 0; c < w.channels; ++c)
          out.tensor[(f * w.pixels + static_cast<std::size_t>(p)) * w.channels + c] =
              w.at(f, static_cast<std::size_t>(src), c);
      }
  }
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.gain_prob) {
    std::uniform_real_distribution<double> gain(spec.gain_low, spec.gain_high);
    for (float& v : out.tensor) v = static_cast<float>(v * gain(rng));
  }
  return out;
}

double detect_sync(std::span<const double> audio, int rate_hz, const SyncOptions& opts) {
  require(!audio.empty(), Errc::empty_input, "sync detection needs audio");
  require(rate_hz > 0 && opts.block_s > 0.0 && opts.threshold_ratio > 1.0, Errc::invalid_config,
          "invalid sync detection options");
  const auto taps = design_lowpass(opts.lowpass_pass_hz, opts.lowpass_stop_hz, 60.0, rate_hz);
  auto low = filter_zero_phase(audio, taps);
  if (opts.period_samples > 0 && opts.period_samples < low.size())
    for (std::size_t i = low.size(); i-- > opts.period_samples;) low[i] -= low[i - opts.period_samples];
  const auto block = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opts.block_s * rate_hz)));
  const std::size_t n_blocks = low.size() / block;
  if (n_blocks == 0) fail(Errc::no_impulse_found, "audio shorter than one detection block");
  std::vector<double> e(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b)
    e[b] = energy(std::span<const double>(low).subspan(b * block, block));
  std::vector<double> sorted = e;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n_blocks / 2), sorted.end());
  const double median = sorted[n_blocks / 2];
  // Digital silence has a zero median; any energy then counts as an onset.
  const double floor = 1e-20 * static_cast<double>(block);
  const double threshold = std::max(median * opts.threshold_ratio, floor);
  for (std::size_t b = 0; b < n_blocks; ++b)
    if (e[b] > threshold) {
      // Refine to the first sample in the block carrying a share of its energy.
      const double per_sample = e[b] / static_cast<double>(block);
      std::size_t i = b * block;
      while (i + 1 < (b + 1) * block && low[i] * low[i] < per_sample) ++i;
      return static_cast<double>(i) / rate_hz;
    }
  fail(Errc::no_impulse_found, "no impulse above the adaptive energy threshold");
}

std::span<const NoiseScenario> noise_scenarios() {
  static constexpr std::array<NoiseScenario, 3> kScenarios{{
      {"cafe", 61.8},
      {"curbside", 71.5},
      {"music", 70.4},
  }};
  return kScenarios;
}

double scenario_level(const std::string& name) {
  for (const auto& s : noise_scenarios())
    if (name == s.name) return s.level_db_a;
  fail(Errc::invalid_level, "unknown noise scenario '" + name + "'");
}

NoiseInjection inject_noise(const Audio& test, const Audio& noise, double level_db, const NoiseCalibration& cal,
                            bool loop, std::string tag) {
  require(std::isfinite(level_db), Errc::invalid_level, "noise level must be finite");
  require(cal.reference_rms > 0.0 && std::isfinite(cal.reference_rms) && std::isfinite(cal.reference_db),
          Errc::invalid_level, "noise calibration must have a positive reference RMS");
  require(!noise.channels.empty() && noise.n_samples() > 0, Errc::empty_input, "noise audio is empty");
  require(noise.rate_hz == test.rate_hz, Errc::shape_mismatch, "noise and test audio rates differ");
  const std::size_t n = test.n_samples();
  require(loop || noise.n_samples() >= n, Errc::length_mismatch,
          "noise is shorter than the test audio; enable looping");

  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& ch : noise.channels) {
    sq += energy(ch);
    count += ch.size();
  }
  const double noise_rms = std::sqrt(sq / static_cast<double>(count));
  const double target = cal.reference_rms * std::pow(10.0, (level_db - cal.reference_db) / 20.0);

  NoiseInjection out;
  out.audio = test;
  out.level_db = level_db;
  out.tag = std::move(tag);
  out.noise_gain = noise_rms > 0.0 ? target / noise_rms : 0.0;
  if (out.noise_gain == 0.0) return out;
  for (std::size_t c = 0; c < out.audio.channels.size(); ++c) {
    const auto& src = noise.channels[c % noise.channels.size()];
    auto& dst = out.audio.channels[c];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += out.noise_gain * src[i % src.size()];
  }
  return out;
}

Audio band_limited_noise(std::size_t n_samples, std::size_t channels, int rate_hz, double low_hz, double high_hz,
                         std::uint64_t seed) {
  require(high_hz > low_hz && low_hz >= 0.0 && high_hz < rate_hz / 2.0, Errc::invalid_config,
          "noise band must lie within (0, Nyquist)");
  std::vector<double> taps;
  const double transition = std::min(500.0, 0.5 * (high_hz - low_hz));
  if (low_hz <= 0.0) {
    taps = design_lowpass(high_hz - transition, high_hz, 80.0, rate_hz);
  } else {
    BandpassSpec band{low_hz, high_hz, 80.0, transition};
    taps = design_bandpass(band, rate_hz);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Audio out;
  out.rate_hz = rate_hz;
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<double> white(n_samples);
    for (double& v : white) v = g(rng);
    auto shaped = filter_zero_phase(white, taps);
    const double r = rms(shaped);
    if (r > 0.0)
      for (double& v : shaped) v /= r;
    out.channels.push_back(std::move(shaped));
  }
  return out;
}

LopoSplit split_lopo(std::span<const SessionInfo> sessions, const std::string& held_out) {
  std::vector<std::string> people;
  for (const auto& s : sessions)
    if (std::find(people.begin(), people.end(), s.participant_id) == people.end())
      people.push_back(s.participant_id);
  require(std::find(people.begin(), people.end(), held_out) != people.end(), Errc::unknown_participant,
          "participant '" + held_out + "' has no sessions");
  require(people.size() >= 2, Errc::empty_data, "leave-one-out needs at least two participants");
  LopoSplit out;
  for (std::size_t i = 0; i < sessions.size(); ++i)
    (sessions[i].participant_id == held_out ? out.finetune : out.train).push_back(i);
  return out;
}

FinetunePlan finetune_budget(std::span<const SessionInfo> sessions, std::span<const std::size_t> candidates,
                             double budget_sessions, std::size_t test_sessions) {
  require(budget_sessions >= 0.0 && std::isfinite(budget_sessions), Errc::invalid_config,
          "fine-tune budget must be >= 0");
  require(candidates.size() > test_sessions, Errc::empty_data,
          "not enough sessions for the requested test hold-out");
  FinetunePlan plan;
  const std::size_t usable = candidates.size() - test_sessions;
  plan.test.assign(candidates.begin() + static_cast<std::ptrdiff_t>(usable), candidates.end());
  require(budget_sessions <= static_cast<double>(usable), Errc::empty_data,
          "fine-tune budget exceeds the available sessions");
  const auto whole = static_cast<std::size_t>(std::floor(budget_sessions));
  for (std::size_t k = 0; k < whole; ++k) {
    const std::size_t s = candidates[k];
    plan.finetune.push_back({s, 0, sessions[s].frames});
  }
  const double part = budget_sessions - static_cast<double>(whole);
  if (part > 0.0 && whole < usable) {
    const std::size_t s = candidates[whole];
    const auto frames = static_cast<std::size_t>(std::llround(part * static_cast<double>(sessions[s].frames)));
    if (frames > 0) plan.finetune.push_back({s, 0, frames});
  }
  return plan;
}

GapFilledAudio zero_fill_gaps(std::span<const LinkPacket> packets, const LinkConfig& cfg,
                              std::optional<std::size_t> expected_samples) {
  const auto rx = receive(packets, cfg, expected_samples);
  GapFilledAudio out;
  out.audio = rx.to_audio(cfg.sample_rate_hz);
  out.mask = rx.mask;
  out.lost_packets = rx.lost_packets + rx.rejected_packets;
  return out;
}

std::vector<std::uint8_t> frame_mask(std::span<const std::uint8_t> sample_mask, int frame_len, std::size_t n_frames,
                                     std::size_t tx_start_offset, std::size_t guard_samples) {
  require(frame_len > 0, Errc::invalid_config, "frame length must be positive");
  const auto n = static_cast<std::size_t>(frame_len);
  std::vector<std::uint8_t> out(n_frames, 0);
  for (std::size_t i = 0; i < sample_mask.size(); ++i) {
    if (!sample_mask[i]) continue;
    const std::size_t lo = i >= guard_samples ? i - guard_samples : 0;
    const std::size_t hi = i + guard_samples;
    if (hi < tx_start_offset) continue;
    const std::size_t f_lo = lo < tx_start_offset ? 0 : (lo - tx_start_offset) / n;
    const std::size_t f_hi = (hi - tx_start_offset) / n;
    for (std::size_t f = f_lo; f <= f_hi && f < n_frames; ++f) out[f] = 1;
  }
  for (std::size_t f = n_frames; f-- > 1;)
    if (out[f - 1]) out[f] = 1;
  return out;
}

EchoProfile process_audio(const Audio& audio, const ProcessOptions& opts) {
  ProfileOptions po;
  po.tx_start_offset = opts.tx_start_offset;
  po.apply_bandpass = opts.apply_bandpass;
  po.bandpass = opts.bandpass;
  const auto orig = echo_profile(audio.channels, opts.fmcw, opts.crop, po);
  return stack_channels(orig, differential(orig));
}

std::size_t filter_guard_samples(const ProcessOptions& opts) {
  if (!opts.apply_bandpass) return 0;
  return (design_bandpass(opts.bandpass, opts.fmcw.sample_rate_hz).size() - 1) / 2;
}

std::size_t export_windows(const std::filesystem::path& dir, std::span<const WindowSample> windows,
                           double pixel_distance_m) {
  std::filesystem::create_directories(dir);
  std::string labels;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    EchoProfile prof(w.frames, w.pixels, w.channels, pixel_distance_m, ProfileKind::stacked);
    std::copy(w.tensor.begin(), w.tensor.end(), prof.data().begin());
    char name[32];
    std::snprintf(name, sizeof name, "window_%06zu.echp", i);
    write_echp(dir / name, prof);
    nlohmann::json rec = {{"file", name},
                          {"participant", w.source.participant_id},
                          {"session", w.source.session_id},
                          {"start_frame", w.source.start_frame},
                          {"end_frame", w.source.end_frame}};
    if (w.class_id >= 0)
      rec["class"] = w.class_id;
    else
      rec["label"] = w.label;
    labels += rec.dump() + "\n";
  }
  write_text_atomic(dir / "labels.jsonl", labels);
  return windows.size();
}

}  // namespace wsonar
