#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wsonar/dataset.hpp"
#include "wsonar/simulator.hpp"

namespace wsonar {

// Paths are relative to the manifest's directory unless absolute. A session
// has either `joints` (JSON Lines poses) or `class_labels` (JSON array of
// {"start_s", "end_s", "class"} trials). `sync_offset_s` is the audio time of
// label time zero.
struct ManifestSession {
  std::string id;
  std::filesystem::path audio;
  std::filesystem::path joints;
  std::filesystem::path class_labels;
  double sync_offset_s = 0.0;
};

struct ManifestParticipant {
  std::string id;
  std::optional<double> hand_v17_m;  // measured wrist-to-little-MCP length
  std::vector<ManifestSession> sessions;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestParticipant> participants;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
  }
};

Manifest manifest_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
nlohmann::json manifest_to_json(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct LoadOptions {
  ProcessOptions process{};
  // Largest gap between two pose records that is bridged by interpolation.
  double max_label_gap_s = 0.1;
  // Normalize poses to this reference and the participant's hand size.
  std::optional<ReferencePose> reference;
  // Per-sample loss mask of the audio (e.g. from zero_fill_gaps).
  std::vector<std::uint8_t> sample_mask;
};

// Pose labels at the end of each frame, interpolated between the two
// surrounding records; frames with no record within the gap limit get none.
std::vector<std::optional<HandPose>> align_poses(std::span<const HandPose> records, std::size_t n_frames,
                                                 const FmcwConfig& fmcw, int tx_start_offset,
                                                 double sync_offset_s, double max_gap_s);

LabeledProfile load_session(const Manifest& manifest, const ManifestParticipant& participant,
                            const ManifestSession& session, const LoadOptions& opts);
LabeledProfile load_session_audio(const Audio& audio, const ManifestParticipant& participant,
                                  const ManifestSession& session, const Manifest& manifest,
                                  const LoadOptions& opts);

// Synthetic cohort: every participant is a jittered HandSceneModel, every
// session a random flexion trajectory rendered through the simulator.
struct CohortSpec {
  std::size_t participants = 12;
  std::size_t sessions = 6;
  std::size_t keyframes = 8;        // per session
  int frames_per_pose = 40;         // frames between keyframes
  double noise_rms = 0.005;
  double mount_shift_m = 0.0003;    // per-session remount, uniform +-
  double travel_scale = 1.0;        // multiplies the flexion-to-distance mapping
  UserJitter jitter{};
  std::uint64_t seed = 0;
  // Hand every participant is derived from; the standard model when unset.
  std::optional<HandSceneModel> base;
};

struct CohortSession {
  std::string participant_id;
  std::string session_id;
  HandSceneModel model;
  PoseSequence sequence;
};

CohortSession render_cohort_session(const CohortSpec& spec, std::size_t participant, std::size_t session,
                                    const DelayedChirp& tx);

// Renders the cohort to `dir` (PCM audio + joints per session) and writes
// `dir/manifest.json`.
Manifest write_cohort(const std::filesystem::path& dir, const CohortSpec& spec, const FmcwConfig& fmcw);

std::string participant_name(std::size_t index);
std::string session_name(std::size_t index);

}  // namespace wsonar
