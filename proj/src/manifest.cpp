#include "wsonar/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "wsonar/error.hpp"

namespace wsonar {
namespace {

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
  require(obj.is_object(), Errc::invalid_config, where + " must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(Errc::invalid_config, "unknown key '" + key + "' in " + where);
}

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

double frame_end_audio_s(std::size_t f, const FmcwConfig& fmcw, int tx_start_offset) {
  return (static_cast<double>(tx_start_offset) + static_cast<double>((f + 1) * fmcw.frame_len_samples)) /
         fmcw.sample_rate_hz;
}

}  // namespace

Manifest manifest_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  try {
    reject_unknown(doc, {"participants"}, "manifest");
    Manifest m;
    m.base_dir = base_dir;
    std::set<std::string> ids;
    for (const auto& pj : doc.at("participants")) {
      reject_unknown(pj, {"id", "hand_v17_m", "sessions"}, "participant");
      ManifestParticipant p;
      p.id = pj.at("id").get<std::string>();
      require(ids.insert(p.id).second, Errc::invalid_config, "duplicate participant id '" + p.id + "'");
      if (pj.contains("hand_v17_m")) p.hand_v17_m = pj["hand_v17_m"].get<double>();
      for (const auto& sj : pj.at("sessions")) {
        reject_unknown(sj, {"id", "audio", "joints", "class_labels", "sync_offset_s"}, "session");
        ManifestSession s;
        s.id = sj.at("id").get<std::string>();
        s.audio = sj.at("audio").get<std::string>();
        s.joints = sj.value("joints", std::string{});
        s.class_labels = sj.value("class_labels", std::string{});
        s.sync_offset_s = sj.value("sync_offset_s", 0.0);
        require(s.joints.empty() != s.class_labels.empty(), Errc::invalid_config,
                "session '" + s.id + "' needs exactly one of joints or class_labels");
        p.sessions.push_back(std::move(s));
      }
      m.participants.push_back(std::move(p));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::invalid_config, std::string("manifest: ") + e.what());
  }
}

nlohmann::json manifest_to_json(const Manifest& manifest) {
  nlohmann::json people = nlohmann::json::array();
  for (const auto& p : manifest.participants) {
    nlohmann::json sessions = nlohmann::json::array();
    for (const auto& s : p.sessions) {
      nlohmann::json sj = {{"id", s.id}, {"audio", s.audio.generic_string()}, {"sync_offset_s", s.sync_offset_s}};
      if (!s.joints.empty()) sj["joints"] = s.joints.generic_string();
      if (!s.class_labels.empty()) sj["class_labels"] = s.class_labels.generic_string();
      sessions.push_back(std::move(sj));
    }
    nlohmann::json pj = {{"id", p.id}, {"sessions", std::move(sessions)}};
    if (p.hand_v17_m) pj["hand_v17_m"] = *p.hand_v17_m;
    people.push_back(std::move(pj));
  }
  return {{"participants", std::move(people)}};
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io, "cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::invalid_config, "manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(doc, path.parent_path());
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  write_text_atomic(path, manifest_to_json(manifest).dump(2) + "\n");
}

std::vector<std::optional<HandPose>> align_poses(std::span<const HandPose> records, std::size_t n_frames,
                                                 const FmcwConfig& fmcw, int tx_start_offset, double sync_offset_s,
                                                 double max_gap_s) {
  std::vector<std::optional<HandPose>> out(n_frames);
  if (records.empty()) return out;
  for (std::size_t i = 1; i < records.size(); ++i)
    require(records[i].timestamp_s >= records[i - 1].timestamp_s, Errc::invalid_pose,
            "pose records must be in time order");
  constexpr double kTol = 1e-9;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double t = frame_end_audio_s(f, fmcw, tx_start_offset) - sync_offset_s;
    const auto it = std::lower_bound(records.begin(), records.end(), t - kTol,
                                     [](const HandPose& p, double v) { return p.timestamp_s < v; });
    if (it != records.end() && std::abs(it->timestamp_s - t) <= kTol) {
      out[f] = *it;
      continue;
    }
    if (it == records.begin() || it == records.end()) continue;
    const HandPose& a = *(it - 1);
    const HandPose& b = *it;
    const double span = b.timestamp_s - a.timestamp_s;
    if (span > max_gap_s || span <= 0.0) continue;
    const double u = (t - a.timestamp_s) / span;
    HandPose p;
    for (std::size_t j = 0; j < kJointCount; ++j) p.joints[j] = (1.0 - u) * a.joints[j] + u * b.joints[j];
    p.timestamp_s = t;
    out[f] = p;
  }
  return out;
}

LabeledProfile load_session_audio(const Audio& audio, const ManifestParticipant& participant,
                                  const ManifestSession& session, const Manifest& manifest, const LoadOptions& opts) {
  require(audio.rate_hz == opts.process.fmcw.sample_rate_hz, Errc::invalid_config,
          "audio rate differs from the configured sample rate");
  LabeledProfile out;
  out.participant_id = participant.id;
  out.session_id = session.id;
  out.profile = process_audio(audio, opts.process);
  const std::size_t frames = out.profile.frames();
  const auto& fmcw = opts.process.fmcw;
  const int off = opts.process.tx_start_offset;

  if (!session.joints.empty()) {
    auto records = read_joints_jsonl(manifest.resolve(session.joints));
    if (opts.reference) {
      const double v17 = participant.hand_v17_m.value_or(opts.reference->palm().v17.norm());
      for (auto& r : records) {
        const double t = r.timestamp_s;
        r = normalize(r, *opts.reference, v17);
        r.timestamp_s = t;
      }
    }
    out.poses = align_poses(records, frames, fmcw, off, session.sync_offset_s, opts.max_label_gap_s);
  } else {
    std::ifstream in(manifest.resolve(session.class_labels));
    require(static_cast<bool>(in), Errc::io, "cannot open class labels " + session.class_labels.string());
    try {
      const auto doc = nlohmann::json::parse(in);
      const double frame_s = fmcw.frame_duration_s();
      const double off_s = static_cast<double>(off) / fmcw.sample_rate_hz;
      for (const auto& tj : doc) {
        reject_unknown(tj, {"start_s", "end_s", "class"}, "trial");
        const double a = (tj.at("start_s").get<double>() + session.sync_offset_s - off_s) / frame_s;
        const double b = (tj.at("end_s").get<double>() + session.sync_offset_s - off_s) / frame_s;
        Trial t;
        t.begin_frame = static_cast<std::size_t>(std::max(0.0, std::floor(a)));
        t.end_frame = std::min(frames, static_cast<std::size_t>(std::max(0.0, std::ceil(b))));
        t.class_id = tj.at("class").get<int>();
        require(t.class_id >= 0 && t.class_id < kInteractionClasses, Errc::invalid_config,
                "interaction class out of range");
        if (t.begin_frame < t.end_frame) out.trials.push_back(t);
      }
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::invalid_config, "class labels " + session.class_labels.string() + ": " + e.what());
    }
  }
  if (!opts.sample_mask.empty()) {
    require(opts.sample_mask.size() == audio.n_samples(), Errc::shape_mismatch,
            "sample mask length differs from the audio");
    out.frame_mask = frame_mask(opts.sample_mask, fmcw.frame_len_samples, frames, static_cast<std::size_t>(off),
                                filter_guard_samples(opts.process));
  }
  return out;
}

LabeledProfile load_session(const Manifest& manifest, const ManifestParticipant& participant,
                            const ManifestSession& session, const LoadOptions& opts) {
  const Audio audio = read_audio(manifest.resolve(session.audio));
  return load_session_audio(audio, participant, session, manifest, opts);
}

std::string participant_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%02zu", index + 1);
  return buf;
}

std::string session_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02zu", index + 1);
  return buf;
}

CohortSession render_cohort_session(const CohortSpec& spec, std::size_t participant, std::size_t session,
                                    const DelayedChirp& tx) {
  require(spec.keyframes >= 1 && spec.frames_per_pose >= 1, Errc::invalid_config,
          "cohort sessions need keyframes and frames_per_pose >= 1");
  HandSceneModel base = spec.base ? *spec.base : HandSceneModel::standard();
  base.noise_rms = spec.noise_rms;
  base.mapping *= spec.travel_scale;
  const HandSceneModel user = jitter_user(base, seeded(spec.seed, 1, participant, 0)(), spec.jitter);
  auto rng = seeded(spec.seed, 2, participant, session);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double shift = spec.mount_shift_m * (2.0 * unit(rng) - 1.0);
  CohortSession out;
  out.participant_id = participant_name(participant);
  out.session_id = session_name(session);
  out.model = shift_mount(user, shift);
  std::vector<std::vector<double>> keys(spec.keyframes, std::vector<double>(out.model.n_params()));
  for (auto& k : keys)
    for (double& v : k) v = unit(rng);
  out.sequence = render_pose_sequence(out.model, keys, tx, spec.frames_per_pose, rng());
  return out;
}

Manifest write_cohort(const std::filesystem::path& dir, const CohortSpec& spec, const FmcwConfig& fmcw) {
  std::filesystem::create_directories(dir);
  const DelayedChirp tx(fmcw);
  Manifest m;
  m.base_dir = dir;
  for (std::size_t p = 0; p < spec.participants; ++p) {
    ManifestParticipant mp;
    mp.id = participant_name(p);
    for (std::size_t s = 0; s < spec.sessions; ++s) {
      const auto cs = render_cohort_session(spec, p, s, tx);
      const std::string stem = cs.participant_id + "_" + cs.session_id;
      ManifestSession ms;
      ms.id = cs.session_id;
      ms.audio = stem + ".pcm";
      ms.joints = stem + ".joints.jsonl";
      write_pcm(dir / ms.audio, cs.sequence.audio);
      write_joints_jsonl(dir / ms.joints, cs.sequence.poses);
      mp.hand_v17_m = palm_frame(cs.model.open_hand).v17.norm();
      mp.sessions.push_back(std::move(ms));
    }
    m.participants.push_back(std::move(mp));
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace wsonar
