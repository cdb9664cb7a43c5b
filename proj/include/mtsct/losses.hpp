#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "mtsct/morphology.hpp"
#include "mtsct/nn/model.hpp"

namespace mtsct {

enum class EmptyRegionRule { SkipTerm, ZeroTerm };

std::string to_string(EmptyRegionRule r);
EmptyRegionRule parse_empty_region_rule(const std::string& s);

struct LossConfig {
  double lambda = 0.5;
  double dice_smooth = 1e-5;
  EmptyRegionRule empty_region_rule = EmptyRegionRule::SkipTerm;
  double soft_weight = 1.0;
  double seg_threshold = 0.5;
  int dilation_iters = 2;

  void validate() const;
};

struct LossBreakdown {
  double dice = 0.0;
  double bce = 0.0;
  double mse_bone = 0.0;
  double mse_soft = 0.0;
  double total = 0.0;
  std::size_t region_size = 0;
};

/// total = (1 - lambda) * dice + lambda * bce + mse_bone + soft_weight * mse_soft
double combine_terms(const LossBreakdown& b, const LossConfig& cfg);

struct LossTargets {
  PatchArray seg;     ///< {0, 1}
  PatchArray ct_norm; ///< normalized CT
};

/// dL/d(head output), one array per head.
struct LossGradients {
  PatchArray seg_logits;
  PatchArray bone;
  PatchArray soft;
};

inline constexpr double kBceEps = 1e-7;

double soft_dice_loss(std::span<const double> pred_prob, std::span<const double> gt, double smooth = 1e-5);
double bce_loss(std::span<const double> pred_prob, std::span<const double> gt, double eps = kBceEps);

/// Mean squared error over the region voxels. An empty region yields 0 under either rule.
double masked_mse(std::span<const double> pred, std::span<const double> gt, const BinaryMask3D& region,
                  EmptyRegionRule rule = EmptyRegionRule::SkipTerm);
double masked_mse(const PatchArray& pred, const PatchArray& gt, const AttentionRegion& region,
                  EmptyRegionRule rule = EmptyRegionRule::SkipTerm);

/// Cascaded objective: R = attention_region(sigmoid(seg_logits)); bone MSE on R, soft MSE on its complement.
LossBreakdown composite_loss(const nn::ModelOutputs& outputs, const LossTargets& targets, const LossConfig& cfg,
                             LossGradients* grads = nullptr);

/// Same objective with a caller-fixed region (region selection is not differentiated anyway).
LossBreakdown composite_loss_with_region(const nn::ModelOutputs& outputs, const LossTargets& targets,
                                         const BinaryMask3D& region, const LossConfig& cfg,
                                         LossGradients* grads = nullptr);

/// Dice + BCE only; MSE fields stay 0. Used for patches sampled away from bone.
LossBreakdown segmentation_loss(const nn::ModelOutputs& outputs, const LossTargets& targets, const LossConfig& cfg,
                                LossGradients* grads = nullptr);

/// Plain MSE of a single regression head against the normalized CT. Reported in mse_soft and total.
LossBreakdown single_task_loss(const PatchArray& pred, const PatchArray& ct_norm, PatchArray* grad = nullptr);

}  // namespace mtsct
