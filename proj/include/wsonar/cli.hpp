#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <string>

#include "wsonar/dataset.hpp"
#include "wsonar/link.hpp"
#include "wsonar/manifest.hpp"
#include "wsonar/model.hpp"

namespace wsonar {

inline constexpr int kReportSchemaVersion = 1;

// One declarative document for every stage. `seed` feeds the augmentation,
// training, link and cohort generators.
struct RunConfig {
  std::uint64_t seed = 0;
  Task task = Task::pose;
  std::filesystem::path manifest;
  std::filesystem::path out = "out";
  ProcessOptions process{};
  std::size_t window = 0;  // 0 selects the task default
  std::size_t stride = 1;
  AugmentSpec augment{};
  int augment_copies = 0;
  TrainSpec train{};
  FeatureConfig features{};
  LinkConfig link{};
  CohortSpec cohort{};
  NoiseCalibration noise{};
  double max_label_gap_s = 0.1;

  void validate() const;
};

// Keys absent from `doc` keep their value from `base`; unknown keys are
// rejected with invalid-config.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base = {});
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig read_config(const std::filesystem::path& path, RunConfig base = {});

// Entry point of the `wsonar` tool. Returns the process exit status: 0 on
// success, 1 for a library error, 2 for a usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wsonar
