#include "wsonar/pose.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "wsonar/audio_io.hpp"
#include "wsonar/error.hpp"

namespace wsonar {
namespace {

constexpr double kMinBoneM = 1e-3;  // palm vectors shorter than 1 mm are degenerate
constexpr double kMinPalmSine = 1e-6;
constexpr double kOriginTolerance = 1e-6;

}  // namespace

const char* joint_name(std::size_t joint) {
  static constexpr std::array<const char*, kJointCount> names = {
      "wrist",      "thumb_cmc",  "thumb_mcp",  "thumb_ip",   "thumb_tip",  "index_mcp",
      "index_pip",  "index_dip",  "index_tip",  "middle_mcp", "middle_pip", "middle_dip",
      "middle_tip", "ring_mcp",   "ring_pip",   "ring_dip",   "ring_tip",   "little_mcp",
      "little_pip", "little_dip", "little_tip"};
  return joint < kJointCount ? names[joint] : "?";
}

PalmFrame palm_frame(const HandPose& pose) {
  const Vec3& w = pose.joints[kWrist];
  PalmFrame out{pose.joints[kIndexMcp] - w, pose.joints[kMiddleMcp] - w, pose.joints[kLittleMcp] - w};
  const double n5 = out.v5.norm(), n17 = out.v17.norm();
  require(n5 >= kMinBoneM && n17 >= kMinBoneM, Errc::degenerate_palm, "palm vector shorter than 1 mm");
  require(out.v5.cross(out.v17).norm() >= kMinPalmSine * n5 * n17, Errc::degenerate_palm,
          "v5 and v17 are collinear");
  return out;
}

Eigen::Matrix3d palm_basis(const HandPose& pose) {
  const PalmFrame palm = palm_frame(pose);
  const Vec3 e1 = palm.v17.normalized();
  const Vec3 e2 = (palm.v5 - palm.v5.dot(e1) * e1).normalized();
  Eigen::Matrix3d basis;
  basis.col(0) = e1;
  basis.col(1) = e2;
  basis.col(2) = e1.cross(e2);
  return basis;
}

ReferencePose::ReferencePose(const HandPose& pose)
    : pose_(pose), palm_(palm_frame(pose)), basis_(palm_basis(pose)) {}

HandPose normalize(const HandPose& pose, const ReferencePose& ref, double measured_v17_m) {
  require(measured_v17_m > 0.0 && std::isfinite(measured_v17_m), Errc::invalid_config,
          "measured v17 length must be positive");
  const Eigen::Matrix3d basis = palm_basis(pose);
  const Eigen::Matrix3d rotation = ref.basis() * basis.transpose();
  const Vec3 wrist = pose.joints[kWrist];
  const double scale = measured_v17_m / (pose.joints[kLittleMcp] - wrist).norm();
  HandPose out;
  out.timestamp_s = pose.timestamp_s;
  for (std::size_t j = 0; j < kJointCount; ++j) out.joints[j] = scale * (rotation * (pose.joints[j] - wrist));
  out.joints[kWrist] = Vec3::Zero();
  return out;
}

HandPose similarity_transform(const HandPose& pose, const Eigen::Matrix3d& rotation, double scale,
                              const Vec3& translation) {
  HandPose out;
  out.timestamp_s = pose.timestamp_s;
  for (std::size_t j = 0; j < kJointCount; ++j)
    out.joints[j] = scale * (rotation * pose.joints[j]) + translation;
  return out;
}

std::array<double, kJointCount - 1> joint_errors(const HandPose& pred, const HandPose& gt) {
  require(pred.joints[kWrist].norm() <= kOriginTolerance && gt.joints[kWrist].norm() <= kOriginTolerance,
          Errc::unnormalized_input, "poses must have the wrist at the origin");
  std::array<double, kJointCount - 1> out{};
  for (std::size_t j = 1; j < kJointCount; ++j) out[j - 1] = (pred.joints[j] - gt.joints[j]).norm();
  return out;
}

double mjede(const HandPose& pred, const HandPose& gt) {
  const auto errors = joint_errors(pred, gt);
  double sum = 0.0;
  for (double e : errors) sum += e;
  return sum / static_cast<double>(errors.size());
}

const std::array<std::size_t, kInteriorJointCount>& interior_joints() {
  static const auto joints = [] {
    std::array<std::size_t, kInteriorJointCount> out{};
    for (std::size_t finger = 0; finger < 5; ++finger)
      for (std::size_t k = 0; k < 3; ++k) out[finger * 3 + k] = 1 + finger * 4 + k;
    return out;
  }();
  return joints;
}

double angle_between_deg(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
}

std::array<double, kInteriorJointCount> joint_angles_deg(const HandPose& pose) {
  std::array<double, kInteriorJointCount> out{};
  const auto& interior = interior_joints();
  for (std::size_t i = 0; i < kInteriorJointCount; ++i) {
    const std::size_t j = interior[i];
    // The first joint of each finger hangs off the wrist.
    const std::size_t prev = (j - 1) % 4 == 0 ? kWrist : j - 1;
    const Vec3 in = pose.joints[j] - pose.joints[prev];
    const Vec3 next = pose.joints[j + 1] - pose.joints[j];
    require(in.norm() > 1e-12 && next.norm() > 1e-12, Errc::zero_length_bone,
            std::string("zero-length bone at ") + joint_name(j));
    out[i] = angle_between_deg(in, next);
  }
  return out;
}

double mjae(const HandPose& pred, const HandPose& gt) {
  const auto a = joint_angles_deg(pred);
  const auto b = joint_angles_deg(gt);
  double sum = 0.0;
  for (std::size_t i = 0; i < kInteriorJointCount; ++i) sum += std::abs(a[i] - b[i]);
  return sum / static_cast<double>(kInteriorJointCount);
}

double mwae(const Vec3& pred_v9, const Vec3& gt_v9) {
  require(pred_v9.norm() > 0.0 && gt_v9.norm() > 0.0, Errc::zero_vector,
          "wrist-to-palm vector must be nonzero");
  return angle_between_deg(pred_v9, gt_v9);
}

std::vector<CdfPoint> error_cdf(std::span<const double> errors, std::span<const double> grid) {
  require(!errors.empty(), Errc::empty_input, "error_cdf needs at least one value");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<CdfPoint> out;
  out.reserve(grid.size());
  for (double t : grid) {
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back({t, static_cast<double>(count) / static_cast<double>(sorted.size())});
  }
  return out;
}

std::vector<CdfPoint> error_cdf(std::span<const double> errors, std::size_t steps) {
  require(!errors.empty(), Errc::empty_input, "error_cdf needs at least one value");
  require(steps >= 1, Errc::invalid_config, "cdf needs at least one step");
  const double hi = *std::max_element(errors.begin(), errors.end());
  std::vector<double> grid(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) grid[i] = hi * static_cast<double>(i) / static_cast<double>(steps);
  grid.back() = hi;
  return error_cdf(errors, grid);
}

std::vector<float> pose_to_label60(const HandPose& pose) {
  std::vector<float> out;
  out.reserve(60);
  for (std::size_t j = 1; j < kJointCount; ++j)
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<float>(pose.joints[j][k] - pose.joints[kWrist][k]));
  return out;
}

HandPose pose_from_label60(std::span<const float> label) {
  require(label.size() == 60, Errc::shape_mismatch, "pose label must have 60 values");
  HandPose out;
  for (std::size_t j = 1; j < kJointCount; ++j)
    for (std::size_t k = 0; k < 3; ++k) out.joints[j][static_cast<Eigen::Index>(k)] = label[(j - 1) * 3 + k];
  return out;
}

HandPose pose_from_json(const nlohmann::json& record, const JointLoadOptions& opts) {
  try {
    HandPose out;
    out.timestamp_s = record.at("t").get<double>();
    const auto& joints = record.at("joints");
    require(joints.is_array() && joints.size() == kJointCount, Errc::invalid_pose,
            "joint record must hold 21 joints");
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const auto& p = joints[j];
      require(p.is_array() && p.size() == 3, Errc::invalid_pose, "joint must have 3 coordinates");
      for (std::size_t k = 0; k < 3; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        out.joints[j][kk] = p[k].get<double>() * opts.scale[kk];
      }
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("bad joint record: ") + e.what());
  }
}

nlohmann::json pose_to_json(const HandPose& pose) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& p : pose.joints) joints.push_back({p.x(), p.y(), p.z()});
  return {{"t", pose.timestamp_s}, {"joints", joints}};
}

std::vector<HandPose> read_joints_jsonl(const std::filesystem::path& path, const JointLoadOptions& opts) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::vector<HandPose> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::format, path.string() + ": " + e.what());
    }
    out.push_back(pose_from_json(record, opts));
  }
  return out;
}

void write_joints_jsonl(const std::filesystem::path& path, std::span<const HandPose> poses) {
  std::ostringstream out;
  for (const auto& p : poses) out << pose_to_json(p).dump() << '\n';
  write_text_atomic(path, out.str());
}

}  // namespace wsonar
