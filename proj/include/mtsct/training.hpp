#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mtsct/checkpoint.hpp"
#include "mtsct/losses.hpp"
#include "mtsct/metrics.hpp"
#include "mtsct/phantom.hpp"

namespace mtsct {

struct TrainConfig {
  nn::TaskMode mode = nn::TaskMode::Multitask;
  nn::BackboneConfig backbone;
  Dims3 patch{32, 32, 32};
  int patches_per_subject = 100;
  int max_epochs = 40;
  int early_stop_patience = 10;
  double lr = 1e-3;
  double finetune_lr = 1e-4;
  int batch_size = 4;
  std::uint64_t seed = 0;
  LossConfig loss;

  void validate() const;
  /// Model layout implied by this config; the init seed is derived from `seed`.
  nn::ModelSpec model_spec() const;
};

/// Network inputs and targets of one subject: min-max normalized MRI, CT normalized by a shared record, skull label.
struct PreparedCase {
  std::string subject_id;
  Volume3D mri_a;
  Volume3D mri_b;
  Volume3D ct_norm;
  BinaryMask3D skull;
};

PreparedCase prepare_case(const PairedCase& c, const NormalizationRecord& ct_record);
/// Min-max record spanning every CT voxel of the cases; training derives the CT scale from its train split.
NormalizationRecord cohort_ct_record(const std::vector<PairedCase>& cases);
/// 2 x voxels input matrix of the patch at origin.
nn::FeatureMap input_patch(const Volume3D& mri_a, const Volume3D& mri_b, Coord3 origin, Dims3 size);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  double seconds = 0.0;
};

struct StepRecord {
  int epoch = 0;
  int step = 0;
  LossBreakdown loss;  ///< mean over the mini-batch
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  int best_epoch = 0;  ///< 0 when no epoch ran
  int stopped_epoch = 0;
  double best_val = 0.0;
  double wall_seconds = 0.0;
};

/// One line per epoch.
void write_history(std::ostream& os, const TrainHistory& h);
/// One line per optimizer step: epoch, step, dice, bce, mse_bone, mse_soft, total, |R|.
void write_step_log(std::ostream& os, const TrainHistory& h);

/// Non-finite loss during training; carries the history up to the failure.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, TrainHistory h) : NumericalError(what), history(std::move(h)) {}
  TrainHistory history;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

/// Adam on fresh random patches every epoch, early stopping on the validation loss, best epoch returned.
TrainResult train(const TrainConfig& cfg, const CohortSplit& cohort);
/// Same loop from the checkpoint's parameters at cfg.finetune_lr. Throws ConfigError on a digest mismatch.
TrainResult finetune(const Checkpoint& ckpt, const CohortSplit& cohort, const TrainConfig& cfg);

/// Anything that maps an input patch (2 x voxels, normalized MRI) at an origin to head outputs (heads x voxels).
class PatchPredictor {
 public:
  virtual ~PatchPredictor() = default;
  virtual nn::TaskMode mode() const = 0;
  virtual Dims3 patch() const = 0;
  virtual nn::Matrix predict(const nn::FeatureMap& input, Coord3 origin) const = 0;
};

class ModelPredictor : public PatchPredictor {
 public:
  explicit ModelPredictor(const nn::UNetModel& model) : model_(model) {}
  nn::TaskMode mode() const override { return model_.spec().mode; }
  Dims3 patch() const override { return model_.spec().patch; }
  nn::Matrix predict(const nn::FeatureMap& input, Coord3) const override { return model_.forward(input); }

 private:
  const nn::UNetModel& model_;
};

struct SynthesisOptions {
  Dims3 stride{16, 16, 16};
  double seg_threshold = 0.5;
  double hu_threshold = kSkullThresholdHu;
  /// Single-task post-processing template (required in that mode).
  const BinaryMask3D* template_mask = nullptr;
  /// Reference skull mask replacing the predicted one when composing the sCT.
  const BinaryMask3D* reference_mask = nullptr;
  /// Maps the regression outputs back to HU.
  NormalizationRecord ct_record = ct_window_record();
};

struct SynthesisResult {
  Volume3D sct;              ///< HU
  BinaryMask3D skull_mask;   ///< predicted; unaffected by reference_mask
  Volume3D seg_probability;  ///< multitask only
};

/// Sliding-window inference over the boundary-snapped grid with overlap averaging.
SynthesisResult synthesize_sct(const PatchPredictor& predictor, const Volume3D& mri_a, const Volume3D& mri_b,
                               const SynthesisOptions& opts);

struct EvaluateOptions {
  Dims3 stride{16, 16, 16};
  bool use_gt_mask_reference = false;
  int jobs = 1;
  NormalizationRecord ct_record = ct_window_record();
};

std::vector<MetricsRecord> evaluate(const PatchPredictor& predictor, const BinaryMask3D* template_mask,
                                    const std::vector<PairedCase>& cases, const EvaluateOptions& opts);
/// Uses the checkpoint's CT record in place of opts.ct_record.
std::vector<MetricsRecord> evaluate(const Checkpoint& ckpt, const std::vector<PairedCase>& cases,
                                    const EvaluateOptions& opts);

}  // namespace mtsct
