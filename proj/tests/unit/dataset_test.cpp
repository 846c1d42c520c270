#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "wsonar/dataset.hpp"
#include "wsonar/echo_io.hpp"
#include "wsonar/error.hpp"
#include "wsonar/link.hpp"
#include "wsonar/simulator.hpp"

using namespace wsonar;

namespace {

LabeledProfile synthetic_session(std::size_t frames, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  LabeledProfile s;
  s.participant_id = "P01";
  s.session_id = "S01";
  s.profile = EchoProfile(frames, 8, 4, 0.00343, ProfileKind::stacked);
  for (double& v : s.profile.data()) v = g(rng);
  for (std::size_t f = 0; f < frames; ++f) {
    auto p = wsonar::testing::random_pose(rng);
    p.timestamp_s = static_cast<double>(f);
    s.poses.push_back(p);
  }
  return s;
}

WindowSample ramp_window(std::uint64_t tag) {
  WindowSample w;
  w.frames = 3;
  w.pixels = 30;
  w.channels = 2;
  for (std::size_t i = 0; i < 180; ++i) w.tensor.push_back(static_cast<float>(1.0 + 0.01 * static_cast<double>(i)));
  w.label = {1.0f, 2.0f, 3.0f};
  w.source = {"P01", "S01", tag, tag + 3};
  return w;
}

// Click at `at_s` over white noise and a chirp train; snr_db compares the
// click's power over its 2 ms burst with the noise power.
std::vector<double> click_track(std::vector<double> clicks_s, double snr_db, std::uint64_t seed) {
  const int rate = 50000;
  FmcwConfig cfg;
  auto audio = gen_tx_stream(cfg, 2 * rate / 600 + 1);
  audio.resize(2 * rate);
  for (double& v : audio) v *= 0.3;
  std::mt19937_64 rng(seed);
  const double noise = 0.01;
  std::normal_distribution<double> g(0.0, noise);
  for (double& v : audio) v += g(rng);
  std::normal_distribution<double> burst(0.0, noise * std::pow(10.0, snr_db / 20.0));
  for (double at_s : clicks_s) {
    const auto start = static_cast<std::size_t>(std::lround(at_s * rate));
    for (std::size_t i = 0; i < 100; ++i) audio[start + i] += burst(rng);
  }
  return audio;
}

std::vector<SessionInfo> cohort_infos(std::size_t people, std::size_t sessions, std::size_t frames) {
  std::vector<SessionInfo> out;
  for (std::size_t p = 0; p < people; ++p)
    for (std::size_t s = 0; s < sessions; ++s)
      out.push_back({"P" + std::to_string(p), "S" + std::to_string(s), frames});
  return out;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("task dimensions") {
  CHECK(label_dim(Task::pose) == 60);
  CHECK(label_dim(Task::wrist) == 3);
  CHECK(label_dim(Task::interaction) == 12);
  CHECK(default_window(Task::pose) == 72);
  CHECK(default_window(Task::interaction) == 1050);
  CHECK(task_from_string("wrist") == Task::wrist);
  CHECK_THROWS_AS(task_from_string("dance"), Error);
}

TEST_CASE("pose windows are labelled by their last frame") {
  const auto s = synthetic_session(144);
  WindowOptions opts;
  const auto windows = make_windows(s, opts);
  REQUIRE(windows.size() == 73);
  for (const auto& w : windows) {
    CHECK(w.label.size() == 60);
    CHECK(w.label == pose_to_label60(*s.poses[w.source.end_frame - 1]));
    CHECK(w.tensor.size() == 72 * 8 * 4);
  }
  CHECK(windows[10].at(71, 3, 2) == static_cast<float>(s.profile.at(81, 3, 2)));
  opts.stride = 10;
  CHECK(make_windows(s, opts).size() == 8);
  opts.task = Task::wrist;
  const auto wrist = make_windows(s, opts);
  const Vec3 v9 = palm_frame(*s.poses[71]).v9;
  CHECK(wrist[0].label.size() == 3);
  CHECK(wrist[0].label[1] == static_cast<float>(v9.y()));
}

TEST_CASE("frame ranges and standardization") {
  const auto s = synthetic_session(100);
  WindowOptions opts;
  opts.window = 10;
  opts.begin_frame = 20;
  opts.end_frame = 50;
  opts.standardize = true;
  const auto windows = make_windows(s, opts);
  REQUIRE(windows.size() == 21);
  CHECK(windows.front().source.start_frame == 20);
  CHECK(windows.back().source.end_frame == 50);
  double mean = 0.0, sq = 0.0;
  for (float v : windows[3].tensor) mean += v;
  mean /= static_cast<double>(windows[3].tensor.size());
  for (float v : windows[3].tensor) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-5);
  CHECK(sq / static_cast<double>(windows[3].tensor.size()) == doctest::Approx(1.0).epsilon(1e-4));
  opts.end_frame = 200;
  CHECK_THROWS_AS(make_windows(s, opts), Error);
}

TEST_CASE("masked frames drop every window touching them") {
  auto s = synthetic_session(144);
  s.frame_mask.assign(144, 0);
  s.frame_mask[100] = 1;
  WindowOptions opts;
  WindowStream stream(s, opts);
  std::size_t n = 0;
  while (auto w = stream.next()) {
    CHECK((w->source.end_frame <= 100 || w->source.start_frame > 100));
    ++n;
  }
  CHECK(stream.skipped_masked() == 44);
  CHECK(n == 29);
}

TEST_CASE("a missing label is a label gap") {
  auto s = synthetic_session(80);
  s.poses[75].reset();
  WindowOptions opts;
  CHECK_THROWS_AS(make_windows(s, opts), Error);
  try {
    make_windows(s, opts);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::label_gap);
  }
  opts.end_frame = 75;
  CHECK(make_windows(s, opts).size() == 4);
}

TEST_CASE("interaction windows centre each trial") {
  auto s = synthetic_session(300);
  s.poses.clear();
  s.trials = {{10, 40, 3}, {50, 250, 11}};
  WindowOptions opts;
  opts.task = Task::interaction;
  opts.window = 100;
  const auto windows = make_windows(s, opts);
  REQUIRE(windows.size() == 2);
  CHECK(windows[0].class_id == 3);
  CHECK(windows[1].class_id == 11);
  CHECK(windows[0].label.empty());
  // 30 frames land at offset 35; the rest is zero.
  CHECK(windows[0].at(0, 0, 0) == 0.0f);
  CHECK(windows[0].at(35, 1, 1) == static_cast<float>(s.profile.at(10, 1, 1)));
  CHECK(windows[0].at(64, 1, 1) == static_cast<float>(s.profile.at(39, 1, 1)));
  CHECK(windows[0].at(65, 1, 1) == 0.0f);
  // 200 frames are cut to the middle 100.
  CHECK(windows[1].source.start_frame == 100);
  CHECK(windows[1].at(0, 2, 3) == static_cast<float>(s.profile.at(100, 2, 3)));
  s.trials.push_back({0, 10, 12});
  CHECK_THROWS_AS(make_windows(s, opts), Error);
}

TEST_CASE("augmentation") {
  const auto w = ramp_window(0);
  AugmentSpec off;
  off.shift_pixels = 0;
  off.gain_prob = 0.0;
  CHECK(augment(w, off).tensor == w.tensor);

  AugmentSpec spec;
  spec.seed = 42;
  std::size_t shifted = 0;
  for (std::uint64_t d = 0; d < 200; ++d) {
    const auto a = augment(w, spec, d);
    CHECK(a.label == w.label);
    CHECK(a.tensor.size() == w.tensor.size());
    CHECK(augment(w, spec, d).tensor == a.tensor);
    // Recover the shift from the zero-filled edge, then bound every value.
    int shift = 0;
    while (shift < 11 && a.at(0, static_cast<std::size_t>(shift), 0) == 0.0f) ++shift;
    int neg = 0;
    while (neg < 11 && a.at(0, 29 - static_cast<std::size_t>(neg), 0) == 0.0f) ++neg;
    const int u = shift > 0 ? shift : -neg;
    if (u != 0) ++shifted;
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t p = 0; p < 30; ++p)
        for (std::size_t c = 0; c < 2; ++c) {
          const int src = static_cast<int>(p) - u;
          const float v = a.at(f, p, c);
          if (src < 0 || src >= 30) {
            CHECK(v == 0.0f);
            continue;
          }
          const double x = w.at(f, static_cast<std::size_t>(src), c);
          CHECK(v >= static_cast<float>(0.95 * x) * (1 - 1e-6f));
          CHECK(v <= static_cast<float>(1.05 * x) * (1 + 1e-6f));
        }
  }
  CHECK(shifted > 150);
  spec.seed = 43;
  CHECK(augment(w, spec, 0).tensor != augment(w, AugmentSpec{11, 0.95, 1.05, 0.8, 42}, 0).tensor);
  spec.gain_low = 2.0;
  CHECK_THROWS_AS(augment(w, spec), Error);
}

TEST_CASE("sync detection finds the click") {
  for (double snr : {10.0, 15.0, 20.0, 30.0})
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto audio = click_track({1.0}, snr, seed);
      CHECK(std::abs(detect_sync(audio, 50000) - 1.0) <= 0.005);
    }
  CHECK_THROWS_AS(detect_sync(click_track({}, 0.0, 1), 50000), Error);
  CHECK(std::abs(detect_sync(click_track({1.3, 0.4}, 20.0, 4), 50000) - 0.4) <= 0.005);
  CHECK_THROWS_AS(detect_sync(std::vector<double>{}, 50000), Error);
}

TEST_CASE("noise injection") {
  FmcwConfig cfg;
  ReflectorScene scene;
  scene.reflectors.push_back({Trajectory{{{0.0, 0.05}, {0.1, 0.08}}}, 0.5, {}, {}});
  scene.direct_path_gain = 0.2;
  const auto test = render(scene, cfg, 10);
  const auto noise = band_limited_noise(test.n_samples(), 2, 50000, 0.0, 18000.0, 3);
  CHECK(rms(noise.channels[0]) == doctest::Approx(1.0));
  const NoiseCalibration cal{0.01, 60.0};

  SUBCASE("zero noise leaves the audio alone") {
    Audio silent = noise;
    for (auto& ch : silent.channels) std::fill(ch.begin(), ch.end(), 0.0);
    CHECK(inject_noise(test, silent, 70.0, cal).audio.channels == test.channels);
  }
  SUBCASE("level follows the calibration") {
    const auto out = inject_noise(test, noise, scenario_level("cafe"), cal, false, "cafe");
    CHECK(out.tag == "cafe");
    CHECK(out.level_db == 61.8);
    CHECK(out.noise_gain == doctest::Approx(0.01 * std::pow(10.0, 1.8 / 20.0)));
    std::vector<double> diff(test.n_samples());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = out.audio.channels[1][i] - test.channels[1][i];
    CHECK(rms(diff) == doctest::Approx(out.noise_gain * rms(noise.channels[1])).epsilon(1e-9));
  }
  SUBCASE("profiles are additive") {
    ProcessOptions po;
    const auto out = inject_noise(test, noise, 80.0, cal);
    Audio scaled = noise;
    for (auto& ch : scaled.channels)
      for (double& v : ch) v *= out.noise_gain;
    const auto a = process_audio(out.audio, po), b = process_audio(test, po), c = process_audio(scaled, po);
    double peak = 0.0;
    for (double v : a.data()) peak = std::max(peak, std::abs(v));
    for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i] - c.data()[i]) <= 1e-6 * peak);
  }
  SUBCASE("out-of-band noise is removed by the band-pass") {
    const auto out = inject_noise(test, noise, 60.0 + 20.0, cal);
    const BandpassSpec bp;
    std::vector<double> diff(test.n_samples());
    const auto filtered_noisy = bandpass(out.audio.channels[0], bp, 50000, EdgeMode::periodic, 600);
    const auto filtered_clean = bandpass(test.channels[0], bp, 50000, EdgeMode::periodic, 600);
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = filtered_noisy[i] - filtered_clean[i];
    const double injected = out.noise_gain;  // noise has unit RMS before scaling
    CHECK(20 * std::log10(rms(diff) / injected) <= -60.0);
  }
  SUBCASE("length and level checks") {
    Audio short_noise = noise;
    for (auto& ch : short_noise.channels) ch.resize(1000);
    CHECK_THROWS_AS(inject_noise(test, short_noise, 60.0, cal), Error);
    const auto looped = inject_noise(test, short_noise, 60.0, cal, true);
    CHECK(looped.audio.channels[0][1500] - test.channels[0][1500] ==
          doctest::Approx(looped.noise_gain * short_noise.channels[0][500]));
    CHECK_THROWS_AS(inject_noise(test, noise, std::nan(""), cal), Error);
    CHECK_THROWS_AS(scenario_level("library"), Error);
  }
}

TEST_CASE("leave-one-participant-out split") {
  const auto infos = cohort_infos(12, 20, 100);
  const auto split = split_lopo(infos, "P3");
  CHECK(split.train.size() == 11 * 20);
  CHECK(split.finetune.size() == 20);
  for (auto i : split.train) CHECK(infos[i].participant_id != "P3");
  for (std::size_t k = 0; k < split.finetune.size(); ++k) CHECK(infos[split.finetune[k]].session_id == "S" + std::to_string(k));
  CHECK_THROWS_AS(split_lopo(infos, "P99"), Error);
  const auto one = cohort_infos(1, 3, 10);
  CHECK_THROWS_AS(split_lopo(one, "P0"), Error);
}

TEST_CASE("fine-tune budgets are nested and keep the test sessions out") {
  const auto infos = cohort_infos(2, 20, 100);
  const auto split = split_lopo(infos, "P1");
  const auto full = finetune_budget(infos, split.finetune, 18);
  CHECK(full.finetune.size() == 18);
  REQUIRE(full.test.size() == 2);
  CHECK(infos[full.test[0]].session_id == "S18");
  const auto half = finetune_budget(infos, split.finetune, 0.5);
  REQUIRE(half.finetune.size() == 1);
  CHECK(half.finetune[0].end_frame == 50);
  CHECK(half.finetune[0].session == split.finetune[0]);
  CHECK(finetune_budget(infos, split.finetune, 0).finetune.empty());
  std::vector<FinetunePlan> plans;
  for (double b : {0.0, 0.5, 1.0, 2.0, 4.0}) plans.push_back(finetune_budget(infos, split.finetune, b));
  for (std::size_t i = 1; i < plans.size(); ++i)
    for (const auto& r : plans[i - 1].finetune) {
      const bool covered = std::any_of(plans[i].finetune.begin(), plans[i].finetune.end(), [&](const FrameRange& q) {
        return q.session == r.session && q.begin_frame <= r.begin_frame && q.end_frame >= r.end_frame;
      });
      CHECK(covered);
    }
  for (const auto& plan : plans)
    for (const auto& r : plan.finetune)
      for (auto t : plan.test) CHECK(r.session != t);
  CHECK_THROWS_AS(finetune_budget(infos, split.finetune, 19), Error);
}

TEST_CASE("packet gaps become masked zeros") {
  LinkConfig cfg;
  cfg.payload_samples_per_packet = 256;
  std::vector<std::vector<std::int16_t>> pcm(2, std::vector<std::int16_t>(256 * 10));
  for (std::size_t i = 0; i < pcm[0].size(); ++i) {
    pcm[0][i] = static_cast<std::int16_t>(1000 + i);
    pcm[1][i] = static_cast<std::int16_t>(-1000 - static_cast<int>(i));
  }
  auto packets = packetize(pcm, cfg);
  const auto clean = zero_fill_gaps(packets, cfg);
  CHECK(std::all_of(clean.mask.begin(), clean.mask.end(), [](auto m) { return m == 0; }));
  packets.erase(packets.begin() + 4);
  const auto lossy = zero_fill_gaps(packets, cfg);
  CHECK(std::count(lossy.mask.begin(), lossy.mask.end(), 1) == 256);
  CHECK(lossy.mask[4 * 256] == 1);
  CHECK(lossy.mask[5 * 256] == 0);
  CHECK(lossy.audio.channels[0][4 * 256 + 7] == 0.0);
  CHECK(lossy.lost_packets == 1);
}

TEST_CASE("random packet loss masks the matching fraction") {
  LinkConfig cfg;
  cfg.payload_samples_per_packet = 16;
  cfg.channels = 1;
  cfg.loss_probability = 0.0035;
  cfg.seed = 7;
  const std::size_t n_packets = 200000;
  std::vector<std::vector<std::int16_t>> pcm(1, std::vector<std::int16_t>(16 * n_packets, 256));
  const auto sent = packetize(pcm, cfg);
  const auto got = zero_fill_gaps(channel(sent, cfg), cfg, pcm[0].size());
  const double frac = static_cast<double>(std::count(got.mask.begin(), got.mask.end(), 1)) / static_cast<double>(got.mask.size());
  CHECK(frac == doctest::Approx(0.0035).epsilon(0.05 / 0.35));
}

TEST_CASE("frame mask") {
  std::vector<std::uint8_t> mask(6000, 0);
  mask[1300] = 1;
  const auto fm = frame_mask(mask, 600, 10);
  CHECK(fm == std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 0, 0, 0, 0});
  const auto guarded = frame_mask(mask, 600, 10, 0, 150);
  CHECK(guarded == std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  const auto offset = frame_mask(mask, 600, 9, 100);
  CHECK(offset == std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 0, 0, 0});
}

TEST_CASE("train and test windows never share frames") {
  std::vector<LabeledProfile> sessions;
  std::vector<SessionInfo> infos;
  for (int p = 0; p < 3; ++p)
    for (int s = 0; s < 4; ++s) {
      auto ls = synthetic_session(90, static_cast<std::uint64_t>(p * 10 + s));
      ls.participant_id = "P" + std::to_string(p);
      ls.session_id = "S" + std::to_string(s);
      infos.push_back({ls.participant_id, ls.session_id, 90});
      sessions.push_back(std::move(ls));
    }
  const auto split = split_lopo(infos, "P1");
  const auto plan = finetune_budget(infos, split.finetune, 1.5);
  std::vector<WindowSource> train, test;
  WindowOptions opts;
  opts.window = 20;
  for (auto i : split.train)
    for (const auto& w : make_windows(sessions[i], opts)) train.push_back(w.source);
  for (const auto& r : plan.finetune) {
    opts.begin_frame = r.begin_frame;
    opts.end_frame = r.end_frame;
    for (const auto& w : make_windows(sessions[r.session], opts)) train.push_back(w.source);
  }
  opts.begin_frame = opts.end_frame = 0;
  for (auto i : plan.test)
    for (const auto& w : make_windows(sessions[i], opts)) test.push_back(w.source);
  REQUIRE(!test.empty());
  for (const auto& a : train)
    for (const auto& b : test)
      if (a.participant_id == b.participant_id && a.session_id == b.session_id)
        CHECK((a.end_frame <= b.start_frame || b.end_frame <= a.start_frame));
}

TEST_CASE("window export") {
  const auto s = synthetic_session(80);
  WindowOptions opts;
  opts.stride = 4;
  const auto windows = make_windows(s, opts);
  const auto dir = wsonar::testing::scratch_dir("export");
  CHECK(export_windows(dir, windows, 0.00343) == windows.size());
  const auto back = read_echp(dir / "window_000001.echp");
  CHECK(back.frames() == 72);
  CHECK(back.at(5, 2, 1) == windows[1].at(5, 2, 1));
  std::ifstream labels(dir / "labels.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(labels, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.at("label").size() == 60);
    ++n;
  }
  CHECK(n == windows.size());
}

}
