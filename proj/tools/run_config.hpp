#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mtsct/phantom.hpp"
#include "mtsct/training.hpp"

namespace mtsct::cli {

struct InferenceConfig {
  Dims3 stride{16, 16, 16};
  double seg_threshold = 0.5;
  double hu_threshold = kSkullThresholdHu;
  bool use_gt_mask_reference = false;
  std::string split = "test";  ///< train | val | test | all
};

struct PathConfig {
  std::string cohort;
  std::string checkpoint;
  std::string single;  ///< metrics table of the single-task variant
  std::string multi;   ///< metrics table of the multitask variant
};

/// Everything a command may read. Unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  PhantomSpec phantom;
  std::size_t cohort_size = 12;
  bool shifted = false;
  TrainConfig train;
  InferenceConfig inference;
  PathConfig paths;

  void validate() const;
};

RunConfig default_run_config();
/// Parses a JSON document layered over the defaults. Throws ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& c);

}  // namespace mtsct::cli
