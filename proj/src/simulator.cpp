#include "wsonar/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <set>

#include "wsonar/error.hpp"

namespace wsonar {

double Trajectory::at(double t) const {
  require(!knots.empty(), Errc::invalid_scene, "trajectory has no knots");
  if (t <= knots.front()[0]) return knots.front()[1];
  if (t >= knots.back()[0]) return knots.back()[1];
  const auto it = std::upper_bound(knots.begin(), knots.end(), t,
                                   [](double v, const std::array<double, 2>& k) { return v < k[0]; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double span = b[0] - a[0];
  if (span <= 0.0) return b[1];
  const double u = (t - a[0]) / span;
  return a[1] + u * (b[1] - a[1]);
}

void ReflectorScene::validate() const {
  require(n_channels >= 1, Errc::invalid_scene, "scene needs at least one channel");
  require(std::isfinite(direct_path_gain), Errc::invalid_scene, "direct path gain must be finite");
  require(noise_rms >= 0.0 && std::isfinite(noise_rms), Errc::invalid_scene, "noise_rms must be >= 0");
  for (const auto& r : reflectors) {
    require(r.gain >= 0.0 && std::isfinite(r.gain), Errc::invalid_scene, "reflector gain must be >= 0");
    require(!r.distance_m.knots.empty(), Errc::invalid_scene, "reflector trajectory is empty");
    for (std::size_t k = 0; k < r.distance_m.knots.size(); ++k) {
      const auto& knot = r.distance_m.knots[k];
      require(std::isfinite(knot[0]) && std::isfinite(knot[1]), Errc::invalid_scene, "non-finite knot");
      require(knot[1] >= 0.0, Errc::invalid_scene, "reflector distance must be >= 0");
      if (k) require(knot[0] >= r.distance_m.knots[k - 1][0], Errc::invalid_scene, "knot times must ascend");
    }
    const auto nc = static_cast<std::size_t>(n_channels);
    require(r.channel_offsets_m.empty() || r.channel_offsets_m.size() == nc, Errc::invalid_scene,
            "channel_offsets_m must have one entry per channel");
    require(r.channel_gains.empty() || r.channel_gains.size() == nc, Errc::invalid_scene,
            "channel_gains must have one entry per channel");
    for (std::size_t c = 0; c < r.channel_offsets_m.size(); ++c)
      for (const auto& knot : r.distance_m.knots)
        require(knot[1] + r.channel_offsets_m[c] >= 0.0, Errc::invalid_scene,
                "channel offset makes a distance negative");
    for (double g : r.channel_gains)
      require(g >= 0.0 && std::isfinite(g), Errc::invalid_scene, "channel gain must be >= 0");
  }
}

namespace {

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const char* where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(Errc::invalid_scene, std::string("unknown key '") + key + "' in " + where);
}

}  // namespace

ReflectorScene scene_from_json(const nlohmann::json& doc) {
  try {
    require(doc.is_object(), Errc::invalid_scene, "scene must be a JSON object");
    reject_unknown(doc, {"reflectors", "direct_path_gain", "noise_rms", "seed", "channels"}, "scene");
    ReflectorScene scene;
    scene.direct_path_gain = doc.value("direct_path_gain", 0.0);
    scene.noise_rms = doc.value("noise_rms", 0.0);
    scene.seed = doc.value("seed", std::uint64_t{0});
    scene.n_channels = doc.value("channels", 2);
    for (const auto& r : doc.value("reflectors", nlohmann::json::array())) {
      reject_unknown(r, {"gain", "trajectory", "channel_offsets_m", "channel_gains"}, "reflector");
      Reflector refl;
      refl.gain = r.value("gain", 1.0);
      for (const auto& knot : r.at("trajectory")) {
        require(knot.is_array() && knot.size() == 2, Errc::invalid_scene, "trajectory knots are [t, d]");
        refl.distance_m.knots.push_back({knot[0].get<double>(), knot[1].get<double>()});
      }
      refl.channel_offsets_m = r.value("channel_offsets_m", std::vector<double>{});
      refl.channel_gains = r.value("channel_gains", std::vector<double>{});
      scene.reflectors.push_back(std::move(refl));
    }
    scene.validate();
    return scene;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::invalid_scene, e.what());
  }
}

nlohmann::json scene_to_json(const ReflectorScene& scene) {
  nlohmann::json refl = nlohmann::json::array();
  for (const auto& r : scene.reflectors) {
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& k : r.distance_m.knots) traj.push_back({k[0], k[1]});
    nlohmann::json item = {{"gain", r.gain}, {"trajectory", traj}};
    if (!r.channel_offsets_m.empty()) item["channel_offsets_m"] = r.channel_offsets_m;
    if (!r.channel_gains.empty()) item["channel_gains"] = r.channel_gains;
    refl.push_back(item);
  }
  return {{"reflectors", refl},
          {"direct_path_gain", scene.direct_path_gain},
          {"noise_rms", scene.noise_rms},
          {"seed", scene.seed},
          {"channels", scene.n_channels}};
}

DelayedChirp::DelayedChirp(const FmcwConfig& cfg, const RenderOptions& opts)
    : cfg_(cfg), opts_(opts) {
  cfg.validate();
  require(opts.sinc_half_width >= 1 && opts.fractional_steps >= 1, Errc::invalid_config,
          "interpolation kernel sizes must be positive");
  require(opts.speed_of_sound > 0.0, Errc::invalid_config, "speed of sound must be positive");
  const auto tx = gen_chirp(cfg);
  n_ = tx.size();
  steps_ = static_cast<std::size_t>(opts.fractional_steps);
  const int h = opts.sinc_half_width;
  const double radius = h + 1.0;
  const double i0b = std::cyl_bessel_i(0.0, opts.kaiser_beta);
  table_.assign((steps_ + 1) * n_, 0.0);
  std::vector<double> kernel(static_cast<std::size_t>(2 * h + 1));
  const auto ni = static_cast<std::int64_t>(n_);
  for (std::size_t q = 0; q <= steps_; ++q) {
    double* row = table_.data() + q * n_;
    if (q == 0 || q == steps_) {
      // Whole-sample delays are copied exactly.
      const std::int64_t shift = q == 0 ? 0 : 1;
      for (std::int64_t m = 0; m < ni; ++m) row[m] = tx[static_cast<std::size_t>(((m - shift) % ni + ni) % ni)];
      continue;
    }
    const double frac = static_cast<double>(q) / static_cast<double>(steps_);
    for (int k = -h; k <= h; ++k) {
      const double u = k - frac;
      const double r = u / radius;
      const double w = std::cyl_bessel_i(0.0, opts.kaiser_beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
      kernel[static_cast<std::size_t>(k + h)] = std::sin(std::numbers::pi * u) / (std::numbers::pi * u) * w;
    }
    // x(m - frac) = sum_k x[m - k] * h(k - frac), with x periodic.
    for (std::int64_t m = 0; m < ni; ++m) {
      double acc = 0.0;
      for (int k = -h; k <= h; ++k)
        acc += tx[static_cast<std::size_t>(((m - k) % ni + ni) % ni)] * kernel[static_cast<std::size_t>(k + h)];
      row[m] = acc;
    }
  }
}

double DelayedChirp::at(std::int64_t n, double delay_samples) const {
  const double whole = std::floor(delay_samples);
  const double pos = (delay_samples - whole) * static_cast<double>(steps_);
  auto q = static_cast<std::size_t>(pos);
  if (q >= steps_) q = steps_ - 1;
  const double alpha = pos - static_cast<double>(q);
  const auto ni = static_cast<std::int64_t>(n_);
  const std::int64_t idx = ((n - static_cast<std::int64_t>(whole)) % ni + ni) % ni;
  const double a = table_[q * n_ + static_cast<std::size_t>(idx)];
  if (alpha == 0.0) return a;
  const double b = table_[(q + 1) * n_ + static_cast<std::size_t>(idx)];
  return a + alpha * (b - a);
}

Audio render(const ReflectorScene& scene, const FmcwConfig& cfg, int n_frames, const RenderOptions& opts) {
  return render(scene, DelayedChirp(cfg, opts), n_frames);
}

Audio render(const ReflectorScene& scene, const DelayedChirp& tx, int n_frames) {
  scene.validate();
  require(n_frames >= 1, Errc::invalid_config, "n_frames must be >= 1");
  const auto& cfg = tx.config();
  const double fs = cfg.sample_rate_hz;
  const double c = tx.options().speed_of_sound;
  const std::size_t len = static_cast<std::size_t>(n_frames) * static_cast<std::size_t>(cfg.frame_len_samples);
  const auto nc = static_cast<std::size_t>(scene.n_channels);

  Audio out;
  out.rate_hz = cfg.sample_rate_hz;
  out.channels.assign(nc, std::vector<double>(len, 0.0));
  if (scene.direct_path_gain != 0.0)
    for (std::size_t n = 0; n < len; ++n) {
      const double v = scene.direct_path_gain * tx.at(static_cast<std::int64_t>(n), 0.0);
      for (auto& ch : out.channels) ch[n] += v;
    }

  std::vector<double> dist(len);
  for (const auto& r : scene.reflectors) {
    for (std::size_t n = 0; n < len; ++n) dist[n] = r.distance_m.at(static_cast<double>(n) / fs);
    for (std::size_t ch = 0; ch < nc; ++ch) {
      const double off = r.channel_offsets_m.empty() ? 0.0 : r.channel_offsets_m[ch];
      const double g = r.gain * (r.channel_gains.empty() ? 1.0 : r.channel_gains[ch]);
      if (g == 0.0) continue;
      auto& dst = out.channels[ch];
      for (std::size_t n = 0; n < len; ++n) {
        const double delay = 2.0 * (dist[n] + off) / c * fs;
        dst[n] += g * tx.at(static_cast<std::int64_t>(n), delay);
      }
    }
  }

  if (scene.noise_rms > 0.0) {
    std::mt19937_64 rng(scene.seed);
    std::normal_distribution<double> noise(0.0, scene.noise_rms);
    for (auto& ch : out.channels)
      for (double& v : ch) v += noise(rng);
  }
  return out;
}

}  // namespace wsonar
