#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtsct/nn/model.hpp"
#include "mtsct/volume.hpp"

namespace mtsct {

/// Frozen model parameters plus the metadata needed to rebuild and audit the model.
struct Checkpoint {
  nn::ModelSpec spec;
  std::vector<std::string> names;
  std::vector<nn::Matrix> params;  ///< values are exactly representable as float32
  int epoch = 0;
  std::uint64_t root_seed = 0;
  std::vector<double> val_history;
  std::optional<BinaryMask3D> template_mask;  ///< single-task post-processing template
  NormalizationRecord ct_record = ct_window_record();  ///< CT scale of the regression outputs
};

/// Copies the model parameters, rounding each to float32 so a save/load round trip is lossless.
Checkpoint snapshot(const nn::UNetModel& model, int epoch, std::uint64_t root_seed);
std::unique_ptr<nn::UNetModel> instantiate(const Checkpoint& ckpt);

/// Writes <dir>/manifest.txt and one <dir>/params/NNN.bin blob per parameter.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Parses ModelSpec::canonical() output.
nn::ModelSpec parse_canonical_spec(const std::string& text);

}  // namespace mtsct
