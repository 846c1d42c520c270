#pragma once

#include <Eigen/Geometry>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wsonar/pose.hpp"

namespace wsonar::testing {

// Direct O(N) evaluation of one DFT bin at an arbitrary frequency.
inline std::complex<double> dft_at(std::span<const double> x, double freq_hz, double rate_hz) {
  std::complex<double> acc = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double ph = -2.0 * std::numbers::pi * freq_hz * static_cast<double>(n) / rate_hz;
    acc += x[n] * std::complex<double>(std::cos(ph), std::sin(ph));
  }
  return acc;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// A plausible right hand, 1 cm-ish bones, jittered per joint.
inline HandPose random_pose(std::mt19937_64& rng, double jitter_m = 0.01) {
  std::uniform_real_distribution<double> u(-jitter_m, jitter_m);
  HandPose p;
  p.joints[kWrist] = Vec3::Zero();
  const double base_x[5] = {0.025, 0.03, 0.01, -0.01, -0.03};
  const double base_y[5] = {0.03, 0.08, 0.085, 0.08, 0.07};
  for (int f = 0; f < 5; ++f) {
    Vec3 cur(base_x[f], base_y[f], 0.0);
    for (int k = 0; k < 4; ++k) {
      p.joints[1 + 4 * f + k] = cur + Vec3(u(rng), u(rng), u(rng));
      cur += Vec3(0.002 * (f - 2), 0.025, 0.004 * k);
    }
  }
  return p;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("wsonar-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace wsonar::testing
