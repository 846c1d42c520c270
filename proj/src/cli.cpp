#include "wsonar/cli.hpp"

#include <unistd.h>

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "wsonar/audio_io.hpp"
#include "wsonar/echo.hpp"
#include "wsonar/echo_io.hpp"
#include "wsonar/error.hpp"
#include "wsonar/simulator.hpp"
#include "wsonar/wire.hpp"

namespace wsonar {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  require(obj.is_object(), Errc::invalid_config, where + " must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(Errc::invalid_config, "unknown key '" + key + "' in " + where);
}

template <typename T>
void take(const json& obj, const char* key, T& value) {
  if (obj.contains(key)) value = obj.at(key).get<T>();
}

const json& section(const json& doc, const char* key, const std::set<std::string>& allowed) {
  static const json empty = json::object();
  if (!doc.contains(key)) return empty;
  reject_unknown(doc.at(key), allowed, key);
  return doc.at(key);
}

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Writes go to a private directory under `out` that is moved into place on
// commit and deleted otherwise, so a failing command leaves no partial files.
class Staging {
 public:
  explicit Staging(fs::path out) : out_(std::move(out)) {
    fs::create_directories(out_);
    tmp_ = out_ / (".wsonar-partial-" + std::to_string(::getpid()));
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~Staging() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  const fs::path& dir() const { return tmp_; }
  fs::path operator/(const std::string& name) const { return tmp_ / name; }
  fs::path final_path(const std::string& name) const { return out_ / name; }

  void commit() {
    for (const auto& entry : fs::directory_iterator(tmp_)) {
      const fs::path target = out_ / entry.path().filename();
      if (fs::is_directory(target) && !fs::is_symlink(target)) fs::remove_all(target);
      fs::rename(entry.path(), target);
    }
    fs::remove(tmp_);
    committed_ = true;
  }

 private:
  fs::path out_, tmp_;
  bool committed_ = false;
};

json report_header(const std::string& command, const RunConfig& cfg) {
  return {{"schema_version", kReportSchemaVersion}, {"command", command}, {"seed", cfg.seed}};
}

void write_json(const fs::path& path, const json& doc) { write_text_atomic(path, doc.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::invalid_config, path.string() + ": " + e.what());
  }
}

const char* solver_name(Solver s) { return s == Solver::adam ? "adam" : "closed_form"; }

Solver solver_from_string(const std::string& s) {
  if (s == "closed_form") return Solver::closed_form;
  if (s == "adam") return Solver::adam;
  fail(Errc::invalid_config, "unknown solver '" + s + "'");
}

const char* truncation_name(Truncation t) { return t == Truncation::mulaw ? "mulaw" : "linear"; }

Truncation truncation_from_string(const std::string& s) {
  if (s == "linear") return Truncation::linear;
  if (s == "mulaw") return Truncation::mulaw;
  fail(Errc::invalid_config, "unknown truncation '" + s + "'");
}

// ---- dataset loading -------------------------------------------------------

struct LoadedSession {
  const ManifestParticipant* participant = nullptr;
  const ManifestSession* session = nullptr;
  LabeledProfile data;
};

LoadOptions load_options(const RunConfig& cfg) {
  LoadOptions lo;
  lo.process = cfg.process;
  lo.max_label_gap_s = cfg.max_label_gap_s;
  return lo;
}

const ManifestParticipant& find_participant(const Manifest& m, const std::string& id) {
  for (const auto& p : m.participants)
    if (p.id == id) return p;
  fail(Errc::unknown_participant, "participant '" + id + "' is not in the manifest");
}

std::vector<LoadedSession> load_participant(const Manifest& m, const ManifestParticipant& p, const RunConfig& cfg) {
  const LoadOptions lo = load_options(cfg);
  std::vector<LoadedSession> out;
  for (const auto& s : p.sessions) out.push_back({&p, &s, load_session(m, p, s, lo)});
  return out;
}

WindowOptions window_options(const RunConfig& cfg, std::size_t begin = 0, std::size_t end = 0) {
  WindowOptions wo;
  wo.task = cfg.task;
  wo.window = cfg.window;
  wo.stride = cfg.stride;
  wo.begin_frame = begin;
  wo.end_frame = end;
  return wo;
}

// Windows of one session (or frame range) as features, with augmented copies
// when `augmented` is set.
void add_features(FeatureSet& set, const LabeledProfile& lp, const RunConfig& cfg, bool augmented,
                  std::size_t begin = 0, std::size_t end = 0) {
  WindowStream stream(lp, window_options(cfg, begin, end));
  while (auto w = stream.next()) {
    set.add(*w);
    if (augmented)
      for (int k = 0; k < cfg.augment_copies; ++k)
        set.add(augment(*w, cfg.augment, static_cast<std::uint64_t>(k) + 1));
  }
}

FeatureSet features_of(std::span<const LoadedSession> sessions, const RunConfig& cfg, bool augmented) {
  FeatureSet set(head_for(cfg.task), cfg.features);
  for (const auto& s : sessions) add_features(set, s.data, cfg, augmented);
  return set;
}

// ---- report printing -------------------------------------------------------

void print_eval(std::ostream& out, const std::string& label, const EvalReport& r) {
  char line[256];
  switch (r.head) {
    case HeadKind::pose60:
      std::snprintf(line, sizeof line, "%-16s windows %6zu  MJEDE %7.2f mm  MJAE %6.2f deg  median %7.2f mm\n",
                    label.c_str(), r.windows, r.mjede_m * 1e3, r.mjae_deg, r.median_window_error_m * 1e3);
      break;
    case HeadKind::wrist3:
      std::snprintf(line, sizeof line, "%-16s windows %6zu  MWAE %6.2f deg\n", label.c_str(), r.windows, r.mwae_deg);
      break;
    case HeadKind::class12:
      std::snprintf(line, sizeof line, "%-16s windows %6zu  accuracy %6.2f %%\n", label.c_str(), r.windows,
                    r.accuracy * 100.0);
      break;
  }
  out << line;
}

// ---- commands --------------------------------------------------------------

struct CommandArgs {
  // synth
  std::string scene;
  int frames = 0;
  bool cohort = false;
  std::string name = "synth";
  // shared inputs
  std::string audio;
  std::string model;
  std::string participant;
  std::vector<std::string> sessions;
  // profile
  int csv_channel = -1;
  // train
  std::string exclude;
  bool lopo = false;
  // finetune
  std::vector<double> budgets{0.0, 0.5, 1.0, 2.0, 4.0};
  std::size_t test_sessions = 2;
  // link
  std::string transport = "replay";
  bool realtime = false;
  // noise-inject
  std::string noise;
  std::string band = "0:18000";
  std::optional<double> level_db;
  std::string scenario;
  bool loop = false;
  // report
  std::vector<std::string> inputs;
  // serve
  int port = 0;
  std::size_t max_requests = 0;
};

Manifest need_manifest(const RunConfig& cfg) {
  require(!cfg.manifest.empty(), Errc::invalid_config, "a manifest is required (--manifest or paths.manifest)");
  return read_manifest(cfg.manifest);
}

void cmd_synth(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  Staging st(cfg.out);
  json rep = report_header("synth", cfg);
  if (a.cohort) {
    require(a.scene.empty(), Errc::invalid_config, "--cohort and --scene are exclusive");
    CohortSpec spec = cfg.cohort;
    spec.seed = cfg.seed;
    const Manifest m = write_cohort(st.dir(), spec, cfg.process.fmcw);
    rep["manifest"] = st.final_path("manifest.json").string();
    rep["participants"] = m.participants.size();
    rep["sessions_per_participant"] = spec.sessions;
    out << "wrote cohort of " << m.participants.size() << " participants to " << cfg.out.string() << "\n";
  } else {
    require(!a.scene.empty(), Errc::invalid_config, "synth needs --scene FILE or --cohort");
    require(a.frames > 0, Errc::invalid_config, "synth needs --frames N > 0");
    const json doc = read_json_file(a.scene);
    ReflectorScene scene = scene_from_json(doc);
    if (!doc.contains("seed")) scene.seed = cfg.seed;
    const Audio audio = render(scene, cfg.process.fmcw, a.frames);
    write_pcm(st / (a.name + ".pcm"), audio);
    rep["audio"] = st.final_path(a.name + ".pcm").string();
    rep["frames"] = a.frames;
    rep["samples"] = audio.n_samples();
    rep["channels"] = audio.n_channels();
    out << "wrote " << audio.n_samples() << " samples x " << audio.n_channels() << " channels\n";
  }
  write_json(st / "synth_report.json", rep);
  st.commit();
}

void cmd_profile(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  require(!a.audio.empty(), Errc::invalid_config, "profile needs --audio FILE");
  const Audio audio = read_audio(a.audio);
  require(audio.rate_hz == cfg.process.fmcw.sample_rate_hz, Errc::invalid_config,
          "audio rate differs from the configured sample rate");
  ProfileOptions po;
  po.tx_start_offset = cfg.process.tx_start_offset;
  po.apply_bandpass = cfg.process.apply_bandpass;
  po.bandpass = cfg.process.bandpass;
  const EchoProfile orig = echo_profile(audio.channels, cfg.process.fmcw, cfg.process.crop, po);
  const EchoProfile diff = differential(orig);
  Staging st(cfg.out);
  const std::string stem = fs::path(a.audio).stem().string();
  write_echp(st / (stem + ".original.echp"), orig);
  write_echp(st / (stem + ".differential.echp"), diff);
  json rep = report_header("profile", cfg);
  rep["frames"] = orig.frames();
  rep["pixels"] = orig.pixels();
  rep["channels"] = orig.channels();
  rep["original"] = st.final_path(stem + ".original.echp").string();
  rep["differential"] = st.final_path(stem + ".differential.echp").string();
  if (a.csv_channel >= 0) {
    require(static_cast<std::size_t>(a.csv_channel) < orig.channels(), Errc::invalid_config, "--csv channel out of range");
    std::ostringstream csv;
    write_csv(csv, orig, static_cast<std::size_t>(a.csv_channel));
    write_text_atomic(st / (stem + ".original.csv"), csv.str());
    rep["csv"] = st.final_path(stem + ".original.csv").string();
  }
  write_json(st / (stem + ".profile_report.json"), rep);
  st.commit();
  out << "profile " << orig.frames() << " x " << orig.pixels() << " x " << orig.channels() << "\n";
}

void cmd_windows(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  const Manifest m = need_manifest(cfg);
  Staging st(cfg.out);
  json rep = report_header("windows", cfg);
  rep["task"] = to_string(cfg.task);
  json sessions = json::array();
  std::size_t total = 0;
  for (const auto& p : m.participants) {
    if (!a.participant.empty() && p.id != a.participant) continue;
    for (const auto& ls : load_participant(m, p, cfg)) {
      std::vector<WindowSample> windows;
      WindowStream stream(ls.data, window_options(cfg));
      while (auto w = stream.next()) {
        windows.push_back(*w);
        for (int k = 0; k < cfg.augment_copies; ++k)
          windows.push_back(augment(*w, cfg.augment, static_cast<std::uint64_t>(k) + 1));
      }
      const std::string dir = p.id + "_" + ls.session->id;
      const std::size_t n = export_windows(st / dir, windows, ls.data.profile.pixel_distance_m());
      total += n;
      sessions.push_back({{"participant", p.id}, {"session", ls.session->id}, {"windows", n},
                          {"skipped_masked", stream.skipped_masked()}, {"dir", st.final_path(dir).string()}});
    }
  }
  if (!a.participant.empty()) find_participant(m, a.participant);
  rep["sessions"] = sessions;
  rep["windows"] = total;
  write_json(st / "windows_report.json", rep);
  st.commit();
  out << "exported " << total << " windows from " << sessions.size() << " sessions\n";
}

void cmd_train(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  const Manifest m = need_manifest(cfg);
  require(!(a.lopo && !a.exclude.empty()), Errc::invalid_config, "--lopo and --exclude are exclusive");
  if (!a.exclude.empty()) find_participant(m, a.exclude);
  const HeadKind head = head_for(cfg.task);
  TrainSpec spec = cfg.train;
  spec.seed = cfg.seed;

  std::vector<FeatureSet> per_user;
  std::vector<RidgeStats> stats;
  WindowShape data_shape;
  const bool closed = is_regression(head) && spec.solver == Solver::closed_form && cfg.augment_copies == 0;
  for (const auto& p : m.participants) {
    const auto sessions = load_participant(m, p, cfg);
    per_user.push_back(features_of(sessions, cfg, true));
    if (!per_user.back().empty()) data_shape = per_user.back().shape();
    if (closed) {
      stats.push_back(per_user.back().empty() ? RidgeStats{} : RidgeStats::of(per_user.back()));
      per_user.back() = FeatureSet(head, cfg.features);  // statistics are enough
    }
  }
  auto fit_without = [&](std::optional<std::size_t> held) {
    if (closed) {
      RidgeStats sum;
      for (std::size_t i = 0; i < stats.size(); ++i)
        if (i != held) sum += stats[i];
      require(sum.n > 0.0, Errc::empty_data, "empty training split");
      return fit_ridge(sum, head, cfg.features, data_shape, spec);
    }
    FeatureSet train(head, cfg.features);
    for (std::size_t i = 0; i < per_user.size(); ++i)
      if (i != held) train.append(per_user[i]);
    require(!train.empty(), Errc::empty_data, "empty training split");
    return fit(train, spec);
  };

  Staging st(cfg.out);
  json rep = report_header("train", cfg);
  rep["task"] = to_string(cfg.task);
  json artifacts = json::array();
  auto emit = [&](const BaselineModel& model, const std::string& file, const std::string& held) {
    save_model(st / file, model);
    json item = {{"model", st.final_path(file).string()}, {"held_out", held}};
    if (!model.loss_history().empty()) item["final_loss"] = model.loss_history().back();
    artifacts.push_back(item);
    out << "trained " << file << (held.empty() ? "" : " (held out " + held + ")") << "\n";
  };
  if (a.lopo) {
    for (std::size_t i = 0; i < m.participants.size(); ++i)
      emit(fit_without(i), "model_lopo_" + m.participants[i].id + ".wsm", m.participants[i].id);
  } else if (!a.exclude.empty()) {
    std::size_t held = 0;
    while (m.participants[held].id != a.exclude) ++held;
    emit(fit_without(held), "model.wsm", a.exclude);
  } else {
    emit(fit_without(std::nullopt), "model.wsm", "");
  }
  rep["artifacts"] = artifacts;
  write_json(st / "train_report.json", rep);
  st.commit();
}

void cmd_finetune(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  require(!a.model.empty(), Errc::invalid_config, "finetune needs --model FILE");
  require(!a.participant.empty(), Errc::invalid_config, "finetune needs --participant ID");
  require(!a.budgets.empty(), Errc::invalid_config, "finetune needs at least one budget");
  const Manifest m = need_manifest(cfg);
  const BaselineModel pretrained = load_model(a.model);
  require(pretrained.head() == head_for(cfg.task), Errc::head_mismatch, "model head differs from the task");
  const auto& p = find_participant(m, a.participant);
  const auto sessions = load_participant(m, p, cfg);
  std::vector<SessionInfo> infos;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    infos.push_back({p.id, sessions[i].session->id, sessions[i].data.profile.frames()});
    candidates.push_back(i);
  }
  TrainSpec spec = cfg.train;
  spec.seed = cfg.seed;

  Staging st(cfg.out);
  json summary = report_header("finetune", cfg);
  summary["participant"] = p.id;
  json rows = json::array();
  for (double budget : a.budgets) {
    const FinetunePlan plan = finetune_budget(infos, candidates, budget, a.test_sessions);
    FeatureSet user(pretrained.head(), pretrained.features());
    json used = json::array();
    for (const auto& r : plan.finetune) {
      add_features(user, sessions[r.session].data, cfg, true, r.begin_frame, r.end_frame);
      used.push_back({{"session", infos[r.session].session_id}, {"begin_frame", r.begin_frame},
                      {"end_frame", r.end_frame}});
    }
    const BaselineModel tuned = finetune(pretrained, user, spec);
    FeatureSet test(pretrained.head(), pretrained.features());
    json tested = json::array();
    for (std::size_t i : plan.test) {
      add_features(test, sessions[i].data, cfg, false);
      tested.push_back(infos[i].session_id);
    }
    require(!test.empty(), Errc::empty_data, "no test windows for participant " + p.id);
    const EvalReport er = evaluate(tuned, test);
    const std::string tag = "b" + format_g(budget);
    save_model(st / ("finetune_" + tag + ".wsm"), tuned);
    json rep = report_header("finetune", cfg);
    rep["participant"] = p.id;
    rep["budget_sessions"] = budget;
    rep["finetune_windows"] = user.size();
    rep["finetune_ranges"] = used;
    rep["test_sessions"] = tested;
    rep["model"] = st.final_path("finetune_" + tag + ".wsm").string();
    rep["metrics"] = er.to_json();
    write_json(st / ("finetune_" + tag + ".json"), rep);
    rows.push_back({{"budget_sessions", budget}, {"report", st.final_path("finetune_" + tag + ".json").string()},
                    {"metrics", er.to_json()}});
    print_eval(out, "budget " + format_g(budget), er);
  }
  summary["budgets"] = rows;
  write_json(st / "finetune_report.json", summary);
  st.commit();
}

void cmd_eval(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  require(!a.model.empty(), Errc::invalid_config, "eval needs --model FILE");
  const Manifest m = need_manifest(cfg);
  const BaselineModel model = load_model(a.model);
  require(model.head() == head_for(cfg.task), Errc::head_mismatch, "model head differs from the task");
  if (!a.participant.empty()) find_participant(m, a.participant);
  const std::set<std::string> wanted(a.sessions.begin(), a.sessions.end());
  FeatureSet test(model.head(), model.features());
  json used = json::array();
  const LoadOptions lo = load_options(cfg);
  for (const auto& p : m.participants) {
    if (!a.participant.empty() && p.id != a.participant) continue;
    for (const auto& s : p.sessions) {
      if (!wanted.empty() && !wanted.count(s.id)) continue;
      add_features(test, load_session(m, p, s, lo), cfg, false);
      used.push_back({{"participant", p.id}, {"session", s.id}});
    }
  }
  require(!test.empty(), Errc::empty_data, "no evaluation windows selected");
  const EvalReport er = evaluate(model, test);
  Staging st(cfg.out);
  json rep = report_header("eval", cfg);
  rep["model"] = a.model;
  rep["sessions"] = used;
  rep["metrics"] = er.to_json();
  write_json(st / "eval_report.json", rep);
  st.commit();
  print_eval(out, "eval", er);
}

void cmd_link(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  require(!a.audio.empty(), Errc::invalid_config, "link needs --audio FILE");
  const Audio audio = read_audio(a.audio);
  LinkConfig lc = cfg.link;
  lc.seed = cfg.seed;
  lc.channels = static_cast<int>(audio.n_channels());
  lc.sample_rate_hz = audio.rate_hz;
  lc.validate();
  const auto pcm = audio_to_pcm16(audio);
  const auto sent = packetize(pcm, lc);
  const Pacing pacing = a.realtime ? Pacing::realtime : Pacing::replay;

  Staging st(cfg.out);
  std::vector<LinkPacket> arrived;
  if (a.transport == "socket") {
    arrived = transmit_over_socket(sent, lc, pacing);
  } else {
    require(a.transport == "replay", Errc::invalid_config, "--transport must be replay or socket");
    std::vector<LinkPacket> kept;
    emit_packets(channel(sent, lc), lc, pacing, [&](const LinkPacket& pk) { kept.push_back(pk); });
    write_packet_stream(st / "packets.bin", kept);
    arrived = read_packet_stream(st / "packets.bin");
  }
  const ReceivedAudio rx = receive(arrived, lc, audio.n_samples());
  write_pcm(st / "received.pcm", rx.to_audio(audio.rate_hz));
  write_file_atomic(st / "received.mask", rx.mask);

  const double loss = sent.empty() ? 0.0 : static_cast<double>(rx.lost_packets) / static_cast<double>(sent.size());
  json rep = report_header("link", cfg);
  rep["transport"] = a.transport;
  rep["pacing"] = a.realtime ? "realtime" : "replay";
  rep["truncation"] = truncation_name(lc.truncation);
  rep["packets_sent"] = sent.size();
  rep["packets_lost"] = rx.lost_packets;
  rep["packets_rejected"] = rx.rejected_packets;
  rep["loss_rate"] = loss;
  rep["masked_samples"] = rx.masked_samples();
  rep["masked_fraction"] = rx.mask.empty() ? 0.0 : static_cast<double>(rx.masked_samples()) / rx.mask.size();
  rep["throughput_bps"] = lc.throughput_bps();
  rep["received"] = st.final_path("received.pcm").string();
  rep["mask"] = st.final_path("received.mask").string();
  write_json(st / "link_report.json", rep);
  st.commit();
  char line[160];
  std::snprintf(line, sizeof line, "sent %zu packets, lost %zu (%.3f %%), masked %zu samples\n", sent.size(),
                rx.lost_packets, loss * 100.0, rx.masked_samples());
  out << line;
}

void cmd_noise(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  require(!a.audio.empty(), Errc::invalid_config, "noise-inject needs --audio FILE");
  require(a.level_db.has_value() != !a.scenario.empty(), Errc::invalid_config,
          "noise-inject needs exactly one of --level-db and --scenario");
  const Audio test = read_audio(a.audio);
  Audio noise;
  std::string tag = a.scenario;
  if (!a.noise.empty()) {
    noise = read_audio(a.noise);
    if (tag.empty()) tag = fs::path(a.noise).stem().string();
  } else {
    const auto colon = a.band.find(':');
    require(colon != std::string::npos, Errc::invalid_config, "--band must be LOW:HIGH in Hz");
    double low = 0.0, high = 0.0;
    try {
      low = std::stod(a.band.substr(0, colon));
      high = std::stod(a.band.substr(colon + 1));
    } catch (const std::exception&) {
      fail(Errc::invalid_config, "--band must be LOW:HIGH in Hz");
    }
    noise = band_limited_noise(test.n_samples(), test.n_channels(), test.rate_hz, low, high, cfg.seed);
    if (tag.empty()) tag = "band_" + a.band;
  }
  const double level = a.level_db ? *a.level_db : scenario_level(a.scenario);
  const NoiseInjection inj = inject_noise(test, noise, level, cfg.noise, a.loop, tag);
  Staging st(cfg.out);
  const std::string stem = fs::path(a.audio).stem().string() + ".noisy";
  write_pcm(st / (stem + ".pcm"), inj.audio);
  json rep = report_header("noise-inject", cfg);
  rep["audio"] = st.final_path(stem + ".pcm").string();
  rep["level_db"] = inj.level_db;
  rep["noise_gain"] = inj.noise_gain;
  rep["tag"] = inj.tag;
  write_json(st / (stem + ".noise_report.json"), rep);
  st.commit();
  out << "injected " << tag << " at " << format_g(level) << " dB\n";
}

void cmd_report(const RunConfig& cfg, const CommandArgs& a, std::ostream& out) {
  require(!a.inputs.empty(), Errc::invalid_config, "report needs --inputs FILE...");
  json rows = json::array();
  for (const auto& path : a.inputs) {
    const json doc = read_json_file(path);
    require(doc.is_object() && doc.value("schema_version", -1) == kReportSchemaVersion, Errc::format,
            path + " is not a report of schema version " + std::to_string(kReportSchemaVersion));
    json row = {{"file", path}, {"command", doc.value("command", "")}};
    char line[256];
    if (doc.contains("metrics")) {
      const json& mt = doc["metrics"];
      row["metrics"] = mt;
      if (doc.contains("budget_sessions")) row["budget_sessions"] = doc["budget_sessions"];
      const std::string label = doc.contains("budget_sessions")
                                    ? "budget " + format_g(doc["budget_sessions"].get<double>())
                                    : doc.value("command", "");
      if (mt.contains("mjede_mm"))
        std::snprintf(line, sizeof line, "%-16s MJEDE %7.2f mm  MJAE %6.2f deg  median %7.2f mm\n", label.c_str(),
                      mt["mjede_mm"].get<double>(), mt["mjae_deg"].get<double>(),
                      mt["median_window_error_mm"].get<double>());
      else if (mt.contains("mwae_deg"))
        std::snprintf(line, sizeof line, "%-16s MWAE %6.2f deg\n", label.c_str(), mt["mwae_deg"].get<double>());
      else
        std::snprintf(line, sizeof line, "%-16s accuracy %6.2f %%\n", label.c_str(),
                      mt.value("accuracy", 0.0) * 100.0);
    } else if (doc.contains("loss_rate")) {
      row["loss_rate"] = doc["loss_rate"];
      std::snprintf(line, sizeof line, "%-16s loss %.3f %%\n", "link", doc["loss_rate"].get<double>() * 100.0);
    } else {
      std::snprintf(line, sizeof line, "%-16s (no metrics)\n", doc.value("command", "?").c_str());
    }
    out << line;
    rows.push_back(row);
  }
  Staging st(cfg.out);
  json rep = report_header("report", cfg);
  rep["rows"] = rows;
  write_json(st / "summary.json", rep);
  st.commit();
}

std::atomic<bool> g_stop{false};

void cmd_serve(const RunConfig&, const CommandArgs& a, std::ostream& out) {
  require(!a.model.empty(), Errc::invalid_config, "serve needs --model FILE");
  require(a.port >= 0 && a.port <= 65535, Errc::invalid_config, "--port out of range");
  InferenceServer server(model_handler(load_model(a.model)), static_cast<std::uint16_t>(a.port));
  out << "listening on 127.0.0.1:" << server.port() << std::endl;
  g_stop = false;
  auto on_signal = [](int) { g_stop = true; };
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop && (a.max_requests == 0 || server.served() < a.max_requests))
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  server.stop();
  out << "served " << server.served() << " requests\n";
}

}  // namespace

void RunConfig::validate() const {
  process.fmcw.validate();
  process.crop.validate(process.fmcw.frame_len_samples);
  if (process.apply_bandpass) process.bandpass.validate(process.fmcw.sample_rate_hz);
  require(process.tx_start_offset >= 0, Errc::invalid_config, "tx_start_offset must be >= 0");
  require(stride >= 1, Errc::invalid_config, "stride must be >= 1");
  require(augment_copies >= 0, Errc::invalid_config, "augment copies must be >= 0");
  augment.validate();
  train.validate();
  features.validate();
  link.validate();
  require(cohort.participants >= 1 && cohort.sessions >= 1 && cohort.keyframes >= 1 && cohort.frames_per_pose >= 1,
          Errc::invalid_config, "cohort sizes must be positive");
  require(cohort.noise_rms >= 0.0 && cohort.travel_scale > 0.0, Errc::invalid_config, "bad cohort noise or travel");
  require(noise.reference_rms > 0.0, Errc::invalid_config, "noise reference_rms must be positive");
  require(max_label_gap_s >= 0.0, Errc::invalid_config, "max_label_gap_s must be >= 0");
}

RunConfig config_from_json(const json& doc, RunConfig c) {
  try {
    reject_unknown(doc, {"seed", "task", "paths", "fmcw", "crop", "bandpass", "tx_start_offset", "windows", "augment",
                         "train", "features", "link", "cohort", "noise", "labels"},
                   "config");
    take(doc, "seed", c.seed);
    if (doc.contains("task")) c.task = task_from_string(doc["task"].get<std::string>());
    {
      const json& j = section(doc, "paths", {"manifest", "out"});
      if (j.contains("manifest")) c.manifest = j["manifest"].get<std::string>();
      if (j.contains("out")) c.out = j["out"].get<std::string>();
    }
    {
      const json& j = section(doc, "fmcw", {"sample_rate_hz", "sweep_start_hz", "sweep_end_hz", "frame_len_samples",
                                            "amplitude", "taper_samples"});
      auto& f = c.process.fmcw;
      take(j, "sample_rate_hz", f.sample_rate_hz);
      take(j, "sweep_start_hz", f.sweep_start_hz);
      take(j, "sweep_end_hz", f.sweep_end_hz);
      take(j, "frame_len_samples", f.frame_len_samples);
      take(j, "amplitude", f.amplitude);
      take(j, "taper_samples", f.taper_samples);
    }
    {
      const json& j = section(doc, "crop", {"start_pixel", "n_pixels"});
      take(j, "start_pixel", c.process.crop.start_pixel);
      take(j, "n_pixels", c.process.crop.n_pixels);
    }
    {
      const json& j =
          section(doc, "bandpass", {"enabled", "low_hz", "high_hz", "stopband_attenuation_db", "transition_hz"});
      take(j, "enabled", c.process.apply_bandpass);
      take(j, "low_hz", c.process.bandpass.low_hz);
      take(j, "high_hz", c.process.bandpass.high_hz);
      take(j, "stopband_attenuation_db", c.process.bandpass.stopband_attenuation_db);
      take(j, "transition_hz", c.process.bandpass.transition_hz);
    }
    take(doc, "tx_start_offset", c.process.tx_start_offset);
    {
      const json& j = section(doc, "windows", {"window", "stride"});
      take(j, "window", c.window);
      take(j, "stride", c.stride);
    }
    {
      const json& j = section(doc, "augment", {"copies", "shift_pixels", "gain_low", "gain_high", "gain_prob"});
      take(j, "copies", c.augment_copies);
      take(j, "shift_pixels", c.augment.shift_pixels);
      take(j, "gain_low", c.augment.gain_low);
      take(j, "gain_high", c.augment.gain_high);
      take(j, "gain_prob", c.augment.gain_prob);
    }
    {
      const json& j = section(doc, "train", {"pretrain_epochs", "finetune_epochs", "learning_rate", "batch_size",
                                             "ridge_lambda", "finetune_lambda", "finetune_weight", "solver"});
      take(j, "pretrain_epochs", c.train.pretrain_epochs);
      take(j, "finetune_epochs", c.train.finetune_epochs);
      take(j, "learning_rate", c.train.learning_rate);
      take(j, "batch_size", c.train.batch_size);
      take(j, "ridge_lambda", c.train.ridge_lambda);
      take(j, "finetune_lambda", c.train.finetune_lambda);
      take(j, "finetune_weight", c.train.finetune_weight);
      if (j.contains("solver")) c.train.solver = solver_from_string(j["solver"].get<std::string>());
    }
    {
      const json& j = section(doc, "features", {"segments", "grid_frames", "grid_pixels"});
      take(j, "segments", c.features.segments);
      take(j, "grid_frames", c.features.grid_frames);
      take(j, "grid_pixels", c.features.grid_pixels);
    }
    {
      const json& j = section(doc, "link", {"bits_per_sample", "payload_samples_per_packet", "loss_probability",
                                            "start_seq", "truncation", "burst"});
      take(j, "bits_per_sample", c.link.bits_per_sample);
      take(j, "payload_samples_per_packet", c.link.payload_samples_per_packet);
      take(j, "loss_probability", c.link.loss_probability);
      take(j, "start_seq", c.link.start_seq);
      if (j.contains("truncation")) c.link.truncation = truncation_from_string(j["truncation"].get<std::string>());
      if (j.contains("burst")) {
        if (j["burst"].is_null()) {
          c.link.burst.reset();
        } else {
          reject_unknown(j["burst"], {"p_good_to_bad", "p_bad_to_good", "loss_good", "loss_bad"}, "link.burst");
          GilbertElliott ge;
          take(j["burst"], "p_good_to_bad", ge.p_good_to_bad);
          take(j["burst"], "p_bad_to_good", ge.p_bad_to_good);
          take(j["burst"], "loss_good", ge.loss_good);
          take(j["burst"], "loss_bad", ge.loss_bad);
          c.link.burst = ge;
        }
      }
    }
    {
      const json& j = section(doc, "cohort", {"participants", "sessions", "keyframes", "frames_per_pose", "noise_rms",
                                              "mount_shift_m", "travel_scale", "gain_spread", "offset_spread_m",
                                              "span_spread"});
      take(j, "participants", c.cohort.participants);
      take(j, "sessions", c.cohort.sessions);
      take(j, "keyframes", c.cohort.keyframes);
      take(j, "frames_per_pose", c.cohort.frames_per_pose);
      take(j, "noise_rms", c.cohort.noise_rms);
      take(j, "mount_shift_m", c.cohort.mount_shift_m);
      take(j, "travel_scale", c.cohort.travel_scale);
      take(j, "gain_spread", c.cohort.jitter.gain_spread);
      take(j, "offset_spread_m", c.cohort.jitter.offset_spread_m);
      take(j, "span_spread", c.cohort.jitter.span_spread);
    }
    {
      const json& j = section(doc, "noise", {"reference_rms", "reference_db"});
      take(j, "reference_rms", c.noise.reference_rms);
      take(j, "reference_db", c.noise.reference_db);
    }
    {
      const json& j = section(doc, "labels", {"max_gap_s"});
      take(j, "max_gap_s", c.max_label_gap_s);
    }
  } catch (const json::exception& e) {
    fail(Errc::invalid_config, std::string("config: ") + e.what());
  }
  return c;
}

json config_to_json(const RunConfig& c) {
  const auto& f = c.process.fmcw;
  const auto& bp = c.process.bandpass;
  json link = {{"bits_per_sample", c.link.bits_per_sample},
               {"payload_samples_per_packet", c.link.payload_samples_per_packet},
               {"loss_probability", c.link.loss_probability},
               {"start_seq", c.link.start_seq},
               {"truncation", truncation_name(c.link.truncation)},
               {"burst", nullptr}};
  if (c.link.burst)
    link["burst"] = {{"p_good_to_bad", c.link.burst->p_good_to_bad},
                     {"p_bad_to_good", c.link.burst->p_bad_to_good},
                     {"loss_good", c.link.burst->loss_good},
                     {"loss_bad", c.link.burst->loss_bad}};
  return {
      {"seed", c.seed},
      {"task", to_string(c.task)},
      {"paths", {{"manifest", c.manifest.string()}, {"out", c.out.string()}}},
      {"fmcw",
       {{"sample_rate_hz", f.sample_rate_hz},
        {"sweep_start_hz", f.sweep_start_hz},
        {"sweep_end_hz", f.sweep_end_hz},
        {"frame_len_samples", f.frame_len_samples},
        {"amplitude", f.amplitude},
        {"taper_samples", f.taper_samples}}},
      {"crop", {{"start_pixel", c.process.crop.start_pixel}, {"n_pixels", c.process.crop.n_pixels}}},
      {"bandpass",
       {{"enabled", c.process.apply_bandpass},
        {"low_hz", bp.low_hz},
        {"high_hz", bp.high_hz},
        {"stopband_attenuation_db", bp.stopband_attenuation_db},
        {"transition_hz", bp.transition_hz}}},
      {"tx_start_offset", c.process.tx_start_offset},
      {"windows", {{"window", c.window}, {"stride", c.stride}}},
      {"augment",
       {{"copies", c.augment_copies},
        {"shift_pixels", c.augment.shift_pixels},
        {"gain_low", c.augment.gain_low},
        {"gain_high", c.augment.gain_high},
        {"gain_prob", c.augment.gain_prob}}},
      {"train",
       {{"pretrain_epochs", c.train.pretrain_epochs},
        {"finetune_epochs", c.train.finetune_epochs},
        {"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"ridge_lambda", c.train.ridge_lambda},
        {"finetune_lambda", c.train.finetune_lambda},
        {"finetune_weight", c.train.finetune_weight},
        {"solver", solver_name(c.train.solver)}}},
      {"features",
       {{"segments", c.features.segments},
        {"grid_frames", c.features.grid_frames},
        {"grid_pixels", c.features.grid_pixels}}},
      {"link", link},
      {"cohort",
       {{"participants", c.cohort.participants},
        {"sessions", c.cohort.sessions},
        {"keyframes", c.cohort.keyframes},
        {"frames_per_pose", c.cohort.frames_per_pose},
        {"noise_rms", c.cohort.noise_rms},
        {"mount_shift_m", c.cohort.mount_shift_m},
        {"travel_scale", c.cohort.travel_scale},
        {"gain_spread", c.cohort.jitter.gain_spread},
        {"offset_spread_m", c.cohort.jitter.offset_spread_m},
        {"span_spread", c.cohort.jitter.span_spread}}},
      {"noise", {{"reference_rms", c.noise.reference_rms}, {"reference_db", c.noise.reference_db}}},
      {"labels", {{"max_gap_s", c.max_label_gap_s}}},
  };
}

RunConfig read_config(const fs::path& path, RunConfig base) {
  return config_from_json(read_json_file(path), std::move(base));
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Acoustic wrist-band hand sensing toolkit"};
  app.name("wsonar");
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, manifest, task;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random generator");
  app.add_option("--config", config_path, "RunConfig JSON file");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--manifest", manifest, "Dataset manifest JSON");
  app.add_option("--task", task, "pose, wrist or interaction");

  CommandArgs a;
  std::map<CLI::App*, void (*)(const RunConfig&, const CommandArgs&, std::ostream&)> handlers;

  auto* synth = app.add_subcommand("synth", "Render a reflector scene or a synthetic cohort");
  synth->add_option("--scene", a.scene, "Scene JSON");
  synth->add_option("--frames", a.frames, "Frames to render");
  synth->add_option("--name", a.name, "Output file stem");
  synth->add_flag("--cohort", a.cohort, "Render the configured synthetic cohort with a manifest");
  handlers[synth] = cmd_synth;

  auto* profile = app.add_subcommand("profile", "Echo profiles of a recording");
  profile->add_option("--audio", a.audio, "PCM or WAV recording")->required();
  profile->add_option("--csv", a.csv_channel, "Also dump this channel of the original profile as CSV");
  handlers[profile] = cmd_profile;

  auto* windows = app.add_subcommand("windows", "Export labelled windows of a manifest");
  windows->add_option("--participant", a.participant, "Only this participant");
  handlers[windows] = cmd_windows;

  auto* train = app.add_subcommand("train", "Pretrain a baseline model");
  train->add_option("--exclude", a.exclude, "Participant held out of training");
  train->add_flag("--lopo", a.lopo, "One model per held-out participant");
  handlers[train] = cmd_train;

  auto* ft = app.add_subcommand("finetune", "Fine-tune on one participant over a budget sweep");
  ft->add_option("--model", a.model, "Pretrained model")->required();
  ft->add_option("--participant", a.participant, "Participant to adapt to")->required();
  ft->add_option("--budgets", a.budgets, "Fine-tune budgets in sessions")->delimiter(',');
  ft->add_option("--test-sessions", a.test_sessions, "Trailing sessions held for testing");
  handlers[ft] = cmd_finetune;

  auto* ev = app.add_subcommand("eval", "Evaluate a model");
  ev->add_option("--model", a.model, "Model artifact")->required();
  ev->add_option("--participant", a.participant, "Only this participant");
  ev->add_option("--sessions", a.sessions, "Only these session ids")->delimiter(',');
  handlers[ev] = cmd_eval;

  auto* link = app.add_subcommand("link", "Send a recording through the emulated wireless link");
  link->add_option("--audio", a.audio, "PCM or WAV recording")->required();
  link->add_option("--transport", a.transport, "replay or socket");
  link->add_flag("--realtime", a.realtime, "Pace packets at the capture rate");
  handlers[link] = cmd_link;

  auto* noise = app.add_subcommand("noise-inject", "Add calibrated noise to a recording");
  noise->add_option("--audio", a.audio, "PCM or WAV recording")->required();
  noise->add_option("--noise", a.noise, "Noise recording (default: generated band-limited noise)");
  noise->add_option("--band", a.band, "Band of generated noise, LOW:HIGH in Hz");
  noise->add_option("--level-db", a.level_db, "Noise level on the calibrated scale");
  noise->add_option("--scenario", a.scenario, "cafe, curbside or music");
  noise->add_flag("--loop", a.loop, "Repeat a short noise recording");
  handlers[noise] = cmd_noise;

  auto* report = app.add_subcommand("report", "Tabulate JSON reports");
  report->add_option("--inputs", a.inputs, "Report files")->required();
  handlers[report] = cmd_report;

  auto* serve = app.add_subcommand("serve", "Serve a model over the inference wire protocol");
  serve->add_option("--model", a.model, "Model artifact")->required();
  serve->add_option("--port", a.port, "TCP port on 127.0.0.1 (0 picks one)");
  serve->add_option("--max-requests", a.max_requests, "Exit after this many requests (0: until signalled)");
  handlers[serve] = cmd_serve;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = read_config(config_path, cfg);
    if (seed_opt->count()) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!manifest.empty()) cfg.manifest = manifest;
    if (!task.empty()) cfg.task = task_from_string(task);
    cfg.augment.seed = cfg.seed;
    cfg.validate();
    for (auto* sub : app.get_subcommands()) handlers.at(sub)(cfg, a, out);
  } catch (const Error& e) {
    err << "wsonar: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "wsonar: io: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace wsonar
