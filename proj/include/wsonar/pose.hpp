#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <vector>

namespace wsonar {

using Vec3 = Eigen::Vector3d;

inline constexpr std::size_t kJointCount = 21;
inline constexpr std::size_t kInteriorJointCount = 15;

// Landmark order: wrist, then four joints per finger from thumb to little
// finger, each running base -> tip.
enum Joint : std::size_t {
  kWrist = 0,
  kThumbCmc, kThumbMcp, kThumbIp, kThumbTip,
  kIndexMcp, kIndexPip, kIndexDip, kIndexTip,
  kMiddleMcp, kMiddlePip, kMiddleDip, kMiddleTip,
  kRingMcp, kRingPip, kRingDip, kRingTip,
  kLittleMcp, kLittlePip, kLittleDip, kLittleTip,
};

const char* joint_name(std::size_t joint);

struct HandPose {
  std::array<Vec3, kJointCount> joints;
  double timestamp_s = 0.0;

  HandPose() { joints.fill(Vec3::Zero()); }
};

// Wrist-to-MCP vectors of the index (v5), middle (v9) and little (v17) fingers.
struct PalmFrame {
  Vec3 v5, v9, v17;
};

PalmFrame palm_frame(const HandPose& pose);

class ReferencePose {
 public:
  explicit ReferencePose(const HandPose& pose);
  const HandPose& pose() const { return pose_; }
  const PalmFrame& palm() const { return palm_; }
  // Orthonormal palm basis as columns (v17 direction, in-plane, normal).
  const Eigen::Matrix3d& basis() const { return basis_; }

 private:
  HandPose pose_;
  PalmFrame palm_;
  Eigen::Matrix3d basis_;
};

// Columns: v17/|v17|, the part of v5 orthogonal to v17 normalized, and their
// cross product. Throws degenerate-palm when v5 and v17 do not span a plane.
Eigen::Matrix3d palm_basis(const HandPose& pose);

// Moves the wrist to the origin, rotates the palm basis onto the reference
// basis, then scales about the origin so that |v17| == measured_v17_m.
HandPose normalize(const HandPose& pose, const ReferencePose& ref, double measured_v17_m);

// x -> scale * R * x + t applied to every joint.
HandPose similarity_transform(const HandPose& pose, const Eigen::Matrix3d& rotation, double scale,
                              const Vec3& translation);

// Per-joint Euclidean error for joints 1..20 (wrist excluded).
std::array<double, kJointCount - 1> joint_errors(const HandPose& pred, const HandPose& gt);
double mjede(const HandPose& pred, const HandPose& gt);

// Unsigned 3-D angle between consecutive bone directions at the 15 interior
// finger joints, degrees; 0 means straight.
std::array<double, kInteriorJointCount> joint_angles_deg(const HandPose& pose);
// Joint index (into HandPose::joints) of each interior angle.
const std::array<std::size_t, kInteriorJointCount>& interior_joints();
double mjae(const HandPose& pred, const HandPose& gt);

double angle_between_deg(const Vec3& a, const Vec3& b);
double mwae(const Vec3& pred_v9, const Vec3& gt_v9);

struct CdfPoint {
  double threshold;
  double fraction;
};

std::vector<CdfPoint> error_cdf(std::span<const double> errors, std::span<const double> grid);
// `steps + 1` evenly spaced thresholds from 0 to max(errors).
std::vector<CdfPoint> error_cdf(std::span<const double> errors, std::size_t steps = 100);

// Flattened joints 1..20 (60 values) and back; the wrist is the origin.
std::vector<float> pose_to_label60(const HandPose& pose);
HandPose pose_from_label60(std::span<const float> label);

// JSON Lines joint records: {"t": seconds, "joints": [[x,y,z] x 21]}.
// `scale` maps stored coordinates to meters per axis, e.g. for
// normalized-image landmarks.
struct JointLoadOptions {
  Vec3 scale = Vec3::Ones();
};

HandPose pose_from_json(const nlohmann::json& record, const JointLoadOptions& opts = {});
nlohmann::json pose_to_json(const HandPose& pose);
std::vector<HandPose> read_joints_jsonl(const std::filesystem::path& path,
                                        const JointLoadOptions& opts = {});
void write_joints_jsonl(const std::filesystem::path& path, std::span<const HandPose> poses);

}  // namespace wsonar
