#include <doctest.h>

#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "support.hpp"
#include "wsonar/cli.hpp"
#include "wsonar/error.hpp"
#include "wsonar/simulator.hpp"

using namespace wsonar;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status;
  std::string out, err;
};

Run wsonar_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "wsonar");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

fs::path scene_file(const fs::path& dir) {
  ReflectorScene s;
  s.n_channels = 2;
  s.noise_rms = 0.01;
  Reflector r;
  r.gain = 0.2;
  r.distance_m.knots = {{0.0, 0.08}, {0.1, 0.12}};
  r.channel_offsets_m = {0.0, 0.002};
  r.channel_gains = {1.0, 0.5};
  s.reflectors.push_back(r);
  auto doc = scene_to_json(s);
  doc.erase("seed");
  write(dir / "scene.json", doc.dump());
  return dir / "scene.json";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config documents") {
  RunConfig c;
  c.seed = 42;
  c.link.loss_probability = 0.01;
  c.link.burst = GilbertElliott{};
  c.train.solver = Solver::adam;
  const auto doc = config_to_json(c);
  CHECK(config_to_json(config_from_json(doc)) == doc);

  CHECK_THROWS_AS(config_from_json(json{{"sed", 1}}), Error);
  CHECK_THROWS_AS(config_from_json(json{{"train", {{"epochs", 3}}}}), Error);
  CHECK_THROWS_AS(config_from_json(json{{"link", {{"burst", {{"p", 0.1}}}}}}), Error);
  CHECK_THROWS_AS(config_from_json(json{{"seed", "many"}}), Error);

  RunConfig base;
  base.stride = 7;
  const auto merged = config_from_json(json{{"seed", 3}}, base);
  CHECK(merged.seed == 3);
  CHECK(merged.stride == 7);
}

TEST_CASE("exit statuses") {
  CHECK(wsonar_cli({}).status == 2);
  CHECK(wsonar_cli({"fly"}).status == 2);
  CHECK(wsonar_cli({"profile"}).status == 2);
  CHECK(wsonar_cli({"--help"}).status == 0);
  const auto dir = testing::scratch_dir("cli-exit");
  const auto missing = wsonar_cli({"--out", dir.string(), "profile", "--audio", (dir / "none.pcm").string()});
  CHECK(missing.status == 1);
  CHECK(missing.err.find("wsonar:") == 0);
  write(dir / "bad.json", R"({"seed": 1, "colour": "red"})");
  const auto bad = wsonar_cli({"--config", (dir / "bad.json").string(), "synth", "--cohort"});
  CHECK(bad.status == 1);
  CHECK(bad.err.find("colour") != std::string::npos);
}

TEST_CASE("synth, profile and link") {
  const auto dir = testing::scratch_dir("cli-synth");
  const auto scene = scene_file(dir);
  write(dir / "cfg.json", R"({"seed": 5, "link": {"loss_probability": 0.05}})");
  const std::string cfg = (dir / "cfg.json").string();

  for (const char* sub : {"a", "b"})
    REQUIRE(wsonar_cli({"--config", cfg, "--out", (dir / sub).string(), "synth", "--scene", scene.string(),
                        "--frames", "40"}).status == 0);
  REQUIRE(wsonar_cli({"--config", cfg, "--seed", "6", "--out", (dir / "c").string(), "synth", "--scene",
                      scene.string(), "--frames", "40"}).status == 0);
  CHECK(slurp(dir / "a" / "synth.pcm") == slurp(dir / "b" / "synth.pcm"));
  CHECK(slurp(dir / "a" / "synth.pcm") != slurp(dir / "c" / "synth.pcm"));
  CHECK(read_json(dir / "a" / "synth_report.json").at("seed") == 5);
  CHECK(read_json(dir / "c" / "synth_report.json").at("seed") == 6);
  CHECK(read_json(dir / "a" / "synth_report.json").at("samples") == 40 * 600);

  const auto audio = (dir / "a" / "synth.pcm").string();
  const auto prof = wsonar_cli({"--out", (dir / "p").string(), "profile", "--audio", audio, "--csv", "1"});
  REQUIRE(prof.status == 0);
  CHECK(prof.out == "profile 40 x 72 x 2\n");
  CHECK(fs::exists(dir / "p" / "synth.original.echp"));
  CHECK(fs::exists(dir / "p" / "synth.differential.echp"));
  CHECK(fs::exists(dir / "p" / "synth.original.csv"));

  const auto link = wsonar_cli({"--config", cfg, "--out", (dir / "l").string(), "link", "--audio", audio});
  REQUIRE(link.status == 0);
  const auto rep = read_json(dir / "l" / "link_report.json");
  CHECK(rep.at("packets_sent") == 40 * 600 / 120);
  CHECK(rep.at("loss_rate").get<double>() > 0.0);
  CHECK(rep.at("masked_samples") == rep.at("packets_lost").get<std::size_t>() * 120);
  CHECK(fs::file_size(dir / "l" / "received.mask") == 40 * 600);
  const auto sock = wsonar_cli({"--config", cfg, "--out", (dir / "s").string(), "link", "--audio", audio,
                                "--transport", "socket"});
  REQUIRE(sock.status == 0);
  CHECK(slurp(dir / "s" / "received.pcm") == slurp(dir / "l" / "received.pcm"));
  CHECK(wsonar_cli({"--out", (dir / "x").string(), "link", "--audio", audio, "--transport", "pigeon"}).status == 1);
  // A failing command leaves nothing behind in the output directory.
  CHECK(fs::is_empty(dir / "x"));

  const auto noisy = wsonar_cli({"--out", (dir / "n").string(), "noise-inject", "--audio", audio, "--level-db",
                                 "60"});
  REQUIRE(noisy.status == 0);
  CHECK(fs::exists(dir / "n" / "synth.noisy.pcm"));
  CHECK(wsonar_cli({"--out", (dir / "n").string(), "noise-inject", "--audio", audio}).status == 1);
}

TEST_CASE("cohort pipeline") {
  const auto dir = testing::scratch_dir("cli-cohort");
  write(dir / "cfg.json", R"({"seed": 2, "windows": {"stride": 8},
    "cohort": {"participants": 3, "sessions": 3, "keyframes": 4, "frames_per_pose": 25}})");
  const std::string cfg = (dir / "cfg.json").string();
  const std::string data = (dir / "data").string();
  REQUIRE(wsonar_cli({"--config", cfg, "--out", data, "synth", "--cohort"}).status == 0);
  const std::string manifest = (dir / "data" / "manifest.json").string();
  CHECK(read_json(manifest).at("participants").size() == 3);

  const auto tr = wsonar_cli({"--config", cfg, "--manifest", manifest, "--out", (dir / "m").string(), "train",
                              "--exclude", "P02"});
  INFO(tr.err);
  REQUIRE(tr.status == 0);
  const std::string model = (dir / "m" / "model.wsm").string();
  CHECK(fs::exists(model));
  CHECK(wsonar_cli({"--config", cfg, "--manifest", manifest, "--out", (dir / "m2").string(), "train", "--exclude",
                    "P99"}).status == 1);

  const auto ev = wsonar_cli({"--config", cfg, "--manifest", manifest, "--out", (dir / "e").string(), "eval",
                              "--model", model, "--participant", "P02"});
  REQUIRE(ev.status == 0);
  CHECK(read_json(dir / "e" / "eval_report.json").at("metrics").at("mjede_mm").get<double>() > 0.0);
  CHECK(wsonar_cli({"--config", cfg, "--manifest", manifest, "--task", "interaction", "--out",
                    (dir / "e2").string(), "eval", "--model", model}).status == 1);

  const auto ft = wsonar_cli({"--config", cfg, "--manifest", manifest, "--out", (dir / "f").string(), "finetune",
                              "--model", model, "--participant", "P02", "--budgets", "0,1", "--test-sessions", "1"});
  REQUIRE(ft.status == 0);
  CHECK(fs::exists(dir / "f" / "finetune_b0.json"));
  CHECK(fs::exists(dir / "f" / "finetune_b1.json"));

  const auto win = wsonar_cli({"--config", cfg, "--manifest", manifest, "--out", (dir / "w").string(), "windows",
                               "--participant", "P01"});
  REQUIRE(win.status == 0);
  CHECK(read_json(dir / "w" / "windows_report.json").at("sessions").size() == 3);

  const auto rep = wsonar_cli({"--out", (dir / "r").string(), "report", "--inputs",
                               (dir / "f" / "finetune_b0.json").string(), (dir / "f" / "finetune_b1.json").string()});
  REQUIRE(rep.status == 0);
  CHECK(rep.out.find("budget 1") != std::string::npos);
}

}
