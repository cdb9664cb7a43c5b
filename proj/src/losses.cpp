#include "mtsct/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mtsct {

std::string to_string(EmptyRegionRule r) { return r == EmptyRegionRule::SkipTerm ? "skip_term" : "zero_term"; }

EmptyRegionRule parse_empty_region_rule(const std::string& s) {
  if (s == "skip_term") return EmptyRegionRule::SkipTerm;
  if (s == "zero_term") return EmptyRegionRule::ZeroTerm;
  throw ConfigError("unknown empty_region_rule '" + s + "'");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss lambda must lie in [0, 1]");
  if (!(dice_smooth >= 0.0)) throw ConfigError("dice_smooth must be non-negative");
  if (!(soft_weight >= 0.0)) throw ConfigError("soft_weight must be non-negative");
  if (!(seg_threshold > 0.0 && seg_threshold < 1.0)) throw ConfigError("seg_threshold must lie in (0, 1)");
  if (dilation_iters < 0) throw ConfigError("dilation_iters must be non-negative");
}

double combine_terms(const LossBreakdown& b, const LossConfig& cfg) {
  return (1.0 - cfg.lambda) * b.dice + cfg.lambda * b.bce + b.mse_bone + cfg.soft_weight * b.mse_soft;
}

namespace {

void require_same(std::size_t a, std::size_t b) {
  if (a != b) throw DataError("loss inputs differ in size (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

struct DiceParts {
  double overlap = 0.0, sum_p = 0.0, sum_g = 0.0;
};

DiceParts dice_parts(std::span<const double> p, std::span<const double> g) {
  DiceParts d;
  for (std::size_t i = 0; i < p.size(); ++i) {
    d.overlap += p[i] * g[i];
    d.sum_p += p[i];
    d.sum_g += g[i];
  }
  return d;
}

PatchArray zeros_like(const PatchArray& a) { return {a.size, std::vector<double>(a.values.size(), 0.0)}; }

std::vector<double> probabilities(const PatchArray& logits) {
  std::vector<double> p(logits.values.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = nn::sigmoid(logits.values[i]);
  return p;
}

// Dice and BCE terms plus their gradient w.r.t. the logits.
void segmentation_terms(const PatchArray& logits, const PatchArray& gt, const LossConfig& cfg, LossBreakdown& b,
                        PatchArray* dlogits) {
  require_same(logits.values.size(), gt.values.size());
  const auto p = probabilities(logits);
  const auto& g = gt.values;
  const double n = static_cast<double>(p.size());
  const DiceParts d = dice_parts(p, g);
  const double num = 2.0 * d.overlap + cfg.dice_smooth;
  const double den = d.sum_p + d.sum_g + cfg.dice_smooth;
  b.dice = 1.0 - num / den;
  b.bce = bce_loss(p, g);
  if (!dlogits) return;
  const double wd = 1.0 - cfg.lambda;
  const double wb = cfg.lambda;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double ddice = -(2.0 * g[i] * den - num) / (den * den);
    double dbce = 0.0;
    if (p[i] > kBceEps && p[i] < 1.0 - kBceEps) dbce = (-g[i] / p[i] + (1.0 - g[i]) / (1.0 - p[i])) / n;
    dlogits->values[i] = (wd * ddice + wb * dbce) * p[i] * (1.0 - p[i]);
  }
}

// Mean over region voxels (inside == want); adds scale * d/dpred into grad.
double region_mse(const PatchArray& pred, const PatchArray& gt, const BinaryMask3D& region, bool want,
                  double scale, PatchArray* grad) {
  std::size_t count = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (region[i] != want) continue;
    const double e = pred.values[i] - gt.values[i];
    sum += e * e;
    ++count;
  }
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  if (grad) {
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
      if (region[i] == want) grad->values[i] += scale * 2.0 * (pred.values[i] - gt.values[i]) * inv;
    }
  }
  return sum * inv;
}

}  // namespace

double soft_dice_loss(std::span<const double> p, std::span<const double> g, double smooth) {
  require_same(p.size(), g.size());
  const DiceParts d = dice_parts(p, g);
  return 1.0 - (2.0 * d.overlap + smooth) / (d.sum_p + d.sum_g + smooth);
}

double bce_loss(std::span<const double> p, std::span<const double> g, double eps) {
  require_same(p.size(), g.size());
  if (p.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], eps, 1.0 - eps);
    s -= g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q);
  }
  return s / static_cast<double>(p.size());
}

double masked_mse(std::span<const double> pred, std::span<const double> gt, const BinaryMask3D& region,
                  EmptyRegionRule) {
  require_same(pred.size(), gt.size());
  require_same(pred.size(), region.size());
  std::size_t count = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!region[i]) continue;
    const double e = pred[i] - gt[i];
    sum += e * e;
    ++count;
  }
  // skip_term drops the term, zero_term keeps it at 0; both contribute nothing to the total.
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double masked_mse(const PatchArray& pred, const PatchArray& gt, const AttentionRegion& region, EmptyRegionRule rule) {
  return masked_mse(pred.values, gt.values, region.voxels, rule);
}

LossBreakdown composite_loss_with_region(const nn::ModelOutputs& o, const LossTargets& t, const BinaryMask3D& region,
                                         const LossConfig& cfg, LossGradients* grads) {
  const std::size_t n = o.seg_logits.values.size();
  require_same(n, o.bone_hu.values.size());
  require_same(n, o.soft_hu.values.size());
  require_same(n, t.ct_norm.values.size());
  require_same(n, region.size());
  LossBreakdown b;
  if (grads) *grads = {zeros_like(o.seg_logits), zeros_like(o.bone_hu), zeros_like(o.soft_hu)};
  segmentation_terms(o.seg_logits, t.seg, cfg, b, grads ? &grads->seg_logits : nullptr);
  b.region_size = region.count();
  b.mse_bone = region_mse(o.bone_hu, t.ct_norm, region, true, 1.0, grads ? &grads->bone : nullptr);
  b.mse_soft = region_mse(o.soft_hu, t.ct_norm, region, false, cfg.soft_weight, grads ? &grads->soft : nullptr);
  b.total = combine_terms(b, cfg);
  return b;
}

LossBreakdown composite_loss(const nn::ModelOutputs& o, const LossTargets& t, const LossConfig& cfg,
                             LossGradients* grads) {
  PatchArray prob{o.seg_logits.size, probabilities(o.seg_logits)};
  const AttentionRegion region = attention_region(prob, cfg.seg_threshold, cfg.dilation_iters);
  return composite_loss_with_region(o, t, region.voxels, cfg, grads);
}

LossBreakdown segmentation_loss(const nn::ModelOutputs& o, const LossTargets& t, const LossConfig& cfg,
                                LossGradients* grads) {
  LossBreakdown b;
  if (grads) *grads = {zeros_like(o.seg_logits), zeros_like(o.bone_hu), zeros_like(o.soft_hu)};
  segmentation_terms(o.seg_logits, t.seg, cfg, b, grads ? &grads->seg_logits : nullptr);
  b.total = combine_terms(b, cfg);
  return b;
}

LossBreakdown single_task_loss(const PatchArray& pred, const PatchArray& ct_norm, PatchArray* grad) {
  const std::size_t n = pred.values.size();
  require_same(n, ct_norm.values.size());
  LossBreakdown b;
  if (n == 0) return b;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred.values[i] - ct_norm.values[i];
    sum += e * e;
  }
  b.mse_soft = sum / static_cast<double>(n);
  b.total = b.mse_soft;
  if (grad) {
    *grad = zeros_like(pred);
    for (std::size_t i = 0; i < n; ++i) grad->values[i] = 2.0 * (pred.values[i] - ct_norm.values[i]) / n;
  }
  return b;
}

}  // namespace mtsct
