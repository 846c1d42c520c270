#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "wsonar/error.hpp"
#include "wsonar/simulator.hpp"

namespace wsonar {
namespace {

struct FingerGeometry {
  Vec3 base;                   // MCP (CMC for the thumb)
  Vec3 dir;                    // extended bone direction
  Vec3 curl;                   // direction the finger curls towards
  std::array<double, 3> bone;  // base->j1, j1->j2, j2->tip
  std::array<double, 3> flex;  // cumulative curl per joint when closed, degrees
};

std::array<FingerGeometry, 5> finger_geometry() {
  const Vec3 palm_in(0.0, 0.0, -1.0);
  const Vec3 thumb_dir = Vec3(0.7, 0.7, 0.0).normalized();
  const Vec3 thumb_curl = Vec3(-0.8, 0.1, -0.6).normalized();
  const Vec3 up(0.0, 1.0, 0.0);
  return {{
      {Vec3(0.025, 0.025, 0.0), thumb_dir, thumb_curl, {0.040, 0.032, 0.028}, {30.0, 45.0, 50.0}},
      {Vec3(0.025, 0.085, 0.0), up, palm_in, {0.045, 0.025, 0.020}, {70.0, 95.0, 60.0}},
      {Vec3(0.005, 0.090, 0.0), up, palm_in, {0.050, 0.030, 0.022}, {70.0, 95.0, 60.0}},
      {Vec3(-0.015, 0.085, 0.0), up, palm_in, {0.047, 0.028, 0.021}, {70.0, 95.0, 60.0}},
      {Vec3(-0.033, 0.075, 0.0), up, palm_in, {0.037, 0.020, 0.018}, {70.0, 95.0, 60.0}},
  }};
}

void place_finger(HandPose& pose, std::size_t finger, const FingerGeometry& g, bool closed) {
  const std::size_t first = 1 + 4 * finger;
  pose.joints[first] = g.base;
  Vec3 p = g.base;
  double angle = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    if (closed) angle += g.flex[k] * std::numbers::pi / 180.0;
    const Vec3 curl_dir = (g.curl - g.curl.dot(g.dir) * g.dir).normalized();
    const Vec3 d = std::cos(angle) * g.dir + std::sin(angle) * curl_dir;
    p += g.bone[k] * d;
    pose.joints[first + 1 + k] = p;
  }
}

}  // namespace

HandSceneModel HandSceneModel::standard() {
  HandSceneModel m;
  constexpr int refl = 6, params = 5;
  // Reflector 0 is the static palm; reflector k + 1 follows finger k. Each
  // finger is seen mainly by one of the two microphones, alternating, so the
  // echoes within one channel sit in separate range zones.
  m.base_distance_m.resize(refl);
  m.base_distance_m << 0.030, 0.060, 0.100, 0.140, 0.180, 0.220;
  m.mapping = Eigen::MatrixXd::Zero(refl, params);
  for (int k = 0; k < params; ++k) {
    m.mapping(k + 1, k) = -0.003;
    // Neighbouring fingers are dragged along slightly.
    if (k > 0) m.mapping(k + 1, k - 1) = -0.0004;
    if (k + 1 < params) m.mapping(k + 1, k + 1) = -0.0004;
  }
  m.gains = {0.04, 0.16, 0.14, 0.16, 0.14, 0.12};
  m.direct_path_gain = 0.05;
  const double back_offsets[refl] = {0.004, 0.003, 0.002, 0.003, 0.002, 0.003};
  for (int r = 0; r < refl; ++r) {
    const bool front = r == 0 || r % 2 == 1;
    m.channel_offsets_m.push_back({0.0, back_offsets[r]});
    m.channel_gains.push_back(front ? std::vector<double>{1.0, 0.1} : std::vector<double>{0.1, 1.0});
  }
  m.param_finger = {0, 1, 2, 3, 4};

  const auto fingers = finger_geometry();
  for (std::size_t f = 0; f < 5; ++f) {
    place_finger(m.open_hand, f, fingers[f], false);
    place_finger(m.closed_hand, f, fingers[f], true);
  }
  return m;
}

void HandSceneModel::validate() const {
  const auto r = static_cast<std::size_t>(mapping.rows());
  require(r >= 1 && mapping.cols() >= 1, Errc::invalid_scene, "hand model needs reflectors and parameters");
  require(static_cast<std::size_t>(base_distance_m.size()) == r && gains.size() == r &&
              channel_offsets_m.size() == r && channel_gains.size() == r,
          Errc::invalid_scene, "per-reflector arrays must match the mapping rows");
  require(param_finger.size() == n_params(), Errc::invalid_scene, "param_finger size");
  for (int f : param_finger) require(f >= 0 && f < 5, Errc::invalid_scene, "param_finger out of range");
  for (std::size_t i = 0; i < r; ++i) {
    require(channel_offsets_m[i].size() == static_cast<std::size_t>(n_channels) &&
                channel_gains[i].size() == static_cast<std::size_t>(n_channels),
            Errc::invalid_scene, "per-channel arrays must have n_channels entries");
    double lowest = base_distance_m[static_cast<Eigen::Index>(i)];
    for (Eigen::Index k = 0; k < mapping.cols(); ++k)
      lowest += std::min(0.0, mapping(static_cast<Eigen::Index>(i), k));
    for (double off : channel_offsets_m[i])
      require(lowest + off >= 0.0, Errc::invalid_scene, "reflector can reach a negative distance");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mapping);
  svd.setThreshold(1e-9);
  require(static_cast<std::size_t>(svd.rank()) == n_params(), Errc::invalid_scene,
          "parameter-to-distance mapping is not injective");
}

void HandSceneModel::check_params(std::span<const double> theta) const {
  require(theta.size() == n_params(), Errc::invalid_pose, "wrong number of flexion parameters");
  for (double t : theta)
    require(t >= 0.0 && t <= 1.0, Errc::invalid_pose, "flexion parameters must lie in [0, 1]");
}

Eigen::VectorXd HandSceneModel::distances(std::span<const double> theta) const {
  check_params(theta);
  const Eigen::Map<const Eigen::VectorXd> t(theta.data(), static_cast<Eigen::Index>(theta.size()));
  return base_distance_m + mapping * t;
}

HandPose HandSceneModel::pose(std::span<const double> theta) const {
  check_params(theta);
  HandPose out = open_hand;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const auto f = static_cast<std::size_t>(param_finger[k]);
    for (std::size_t j = 2 + 4 * f; j <= 4 + 4 * f; ++j)
      out.joints[j] = (1.0 - theta[k]) * open_hand.joints[j] + theta[k] * closed_hand.joints[j];
  }
  return out;
}

std::vector<double> HandSceneModel::estimate_params(const HandPose& p) const {
  std::vector<double> theta(n_params());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const auto f = static_cast<std::size_t>(param_finger[k]);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 2 + 4 * f; j <= 4 + 4 * f; ++j) {
      const Vec3 span = closed_hand.joints[j] - open_hand.joints[j];
      num += (p.joints[j] - open_hand.joints[j]).dot(span);
      den += span.squaredNorm();
    }
    theta[k] = den > 0.0 ? num / den : 0.0;
  }
  return theta;
}

HandSceneModel jitter_user(const HandSceneModel& model, std::uint64_t seed, const UserJitter& jitter) {
  HandSceneModel out = model;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t r = 0; r < out.n_reflectors(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    out.gains[r] *= 1.0 + jitter.gain_spread * unit(rng);
    out.base_distance_m[ri] += jitter.offset_spread_m * unit(rng);
    out.mapping.row(ri) *= 1.0 + jitter.span_spread * unit(rng);
  }
  out.validate();
  return out;
}

HandSceneModel shift_mount(const HandSceneModel& model, double offset_m) {
  HandSceneModel out = model;
  out.base_distance_m.array() += offset_m;
  out.validate();
  return out;
}

PoseSequence render_pose_sequence(const HandSceneModel& model,
                                  const std::vector<std::vector<double>>& keyframes,
                                  const FmcwConfig& cfg, int frames_per_pose, std::uint64_t seed) {
  return render_pose_sequence(model, keyframes, DelayedChirp(cfg), frames_per_pose, seed);
}

PoseSequence render_pose_sequence(const HandSceneModel& model,
                                  const std::vector<std::vector<double>>& keyframes,
                                  const DelayedChirp& tx, int frames_per_pose, std::uint64_t seed) {
  model.validate();
  require(!keyframes.empty(), Errc::invalid_pose, "pose sequence is empty");
  require(frames_per_pose >= 1, Errc::invalid_config, "frames_per_pose must be >= 1");
  for (const auto& k : keyframes) model.check_params(k);

  const double frame_s = tx.config().frame_duration_s();
  const double key_s = frame_s * frames_per_pose;
  ReflectorScene scene;
  scene.n_channels = model.n_channels;
  scene.direct_path_gain = model.direct_path_gain;
  scene.noise_rms = model.noise_rms;
  scene.seed = seed;
  std::vector<Eigen::VectorXd> dists;
  for (const auto& k : keyframes) dists.push_back(model.distances(k));
  for (std::size_t r = 0; r < model.n_reflectors(); ++r) {
    Reflector refl;
    refl.gain = model.gains[r];
    refl.channel_offsets_m = model.channel_offsets_m[r];
    refl.channel_gains = model.channel_gains[r];
    for (std::size_t k = 0; k < keyframes.size(); ++k)
      refl.distance_m.knots.push_back({static_cast<double>(k) * key_s, dists[k][static_cast<Eigen::Index>(r)]});
    scene.reflectors.push_back(std::move(refl));
  }

  const int n_frames = static_cast<int>(keyframes.size()) * frames_per_pose;
  PoseSequence out;
  out.audio = render(scene, tx, n_frames);
  const std::size_t np = model.n_params();
  for (int f = 0; f < n_frames; ++f) {
    const double pos = (f + 1) * frame_s / key_s;
    auto k = static_cast<std::size_t>(pos);
    std::vector<double> theta(np);
    if (k + 1 >= keyframes.size()) {
      theta = keyframes.back();
    } else {
      const double u = pos - static_cast<double>(k);
      for (std::size_t i = 0; i < np; ++i)
        theta[i] = std::clamp((1.0 - u) * keyframes[k][i] + u * keyframes[k + 1][i], 0.0, 1.0);
    }
    out.poses.push_back(model.pose(theta));
    out.poses.back().timestamp_s = (f + 1) * frame_s;
    out.params.push_back(std::move(theta));
  }
  return out;
}

}  // namespace wsonar
