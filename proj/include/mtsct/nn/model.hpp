#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtsct/nn/layers.hpp"
#include "mtsct/nn/transformer.hpp"
#include "mtsct/nn/vss3d.hpp"
#include "mtsct/patching.hpp"

namespace mtsct::nn {

enum class BottleneckKind { Vss3d, Transformer };
enum class TaskMode { SingleTask, Multitask };

std::string to_string(BottleneckKind k);
std::string to_string(TaskMode m);
BottleneckKind parse_bottleneck(const std::string& s);
TaskMode parse_task_mode(const std::string& s);

struct BackboneConfig {
  int in_channels = 2;
  int levels = 4;
  int base_width = 8;
  BottleneckKind bottleneck = BottleneckKind::Vss3d;
  int vss3d_blocks = 2;
  int scan_directions = 6;
  double droppath_rate = 0.1;
  int state_dim = 8;
  int transformer_layers = 2;
  int transformer_heads = 4;

  void validate() const;
};

/// Everything that fixes the parameter layout of a model.
struct ModelSpec {
  BackboneConfig backbone;
  TaskMode mode = TaskMode::Multitask;
  Dims3 patch{32, 32, 32};
  std::uint64_t init_seed = 0;

  /// Canonical text form; the digest is taken over it.
  std::string canonical() const;
  std::string digest() const;
};

/// Multitask head outputs on one patch, all at the input resolution.
struct ModelOutputs {
  PatchArray seg_logits;
  PatchArray bone_hu;  ///< normalized intensity
  PatchArray soft_hu;  ///< normalized intensity
};

/// m = sigmoid(seg_logits) > threshold; fused = m * bone + (1 - m) * soft.
PatchArray fuse_outputs(const ModelOutputs& outputs, double binarize_threshold = 0.5);
/// Same fusion with an externally supplied binary mask.
PatchArray fuse_with_mask(const ModelOutputs& outputs, const PatchArray& mask);

class UNetModel {
 public:
  struct Trace;

  explicit UNetModel(const ModelSpec& spec);
  ~UNetModel();
  UNetModel(const UNetModel&) = delete;
  UNetModel& operator=(const UNetModel&) = delete;

  const ModelSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int head_count() const { return spec_.mode == TaskMode::Multitask ? 3 : 1; }
  /// Parameters excluding the output heads.
  std::size_t backbone_scalar_count() const;

  /// input: in_channels x voxels of a patch. Returns heads x voxels.
  /// A non-null trace records activations for backward; a non-null drop_rng enables stochastic depth.
  Matrix forward(const FeatureMap& input, Trace* trace = nullptr, Rng* drop_rng = nullptr) const;
  /// dheads: heads x voxels. Accumulates into g.
  void backward(const Trace& trace, const Matrix& dheads, GradBuffer& g) const;

  /// Forward (stochastic depth on when drop_rng is non-null), then backward of the gradient that
  /// loss_grad returns for the head outputs. Gradients accumulate into g.
  void train_step(const FeatureMap& input, Rng* drop_rng, const std::function<Matrix(const Matrix&)>& loss_grad,
                  GradBuffer& g) const;

  /// Evaluation-mode forward split into named heads (multitask only).
  ModelOutputs predict(const FeatureMap& input) const;

  /// Stacked per-item evaluation; items never interact.
  std::vector<Matrix> forward_batch(const std::vector<FeatureMap>& inputs) const;

  const std::vector<Vss3dBlock>& vss_blocks() const { return vss_; }
  const TransformerBottleneck* transformer() const { return transformer_.get(); }

 private:
  struct ConvBlock {
    Conv3d a, b;
  };

  ModelSpec spec_;
  ParamSet params_;
  std::vector<ConvBlock> enc_;
  std::vector<Linear> up_proj_;  ///< up_proj_[l]: width(l+1) -> width(l), applied before upsampling
  std::vector<ConvBlock> dec_;
  std::vector<Vss3dBlock> vss_;
  std::unique_ptr<TransformerBottleneck> transformer_;
  Linear heads_;
  std::size_t first_head_param_ = 0;
};

/// Builds the channels x voxels model input from per-channel patch arrays.
FeatureMap to_feature_map(const std::vector<PatchArray>& channels);
PatchArray row_to_patch(const Matrix& heads, int row, Dims3 dims);
ModelOutputs split_heads(const Matrix& heads, Dims3 dims);

}  // namespace mtsct::nn
