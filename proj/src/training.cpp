#include "mtsct/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include "mtsct/morphology.hpp"
#include "mtsct/nn/adam.hpp"
#include "mtsct/patching.hpp"

namespace mtsct {

void TrainConfig::validate() const {
  backbone.validate();
  loss.validate();
  if (backbone.in_channels != 2) throw ConfigError("the pipeline feeds two MRI channels; in_channels must be 2");
  if (!patch.positive()) throw ConfigError("patch dims must be positive");
  if (patches_per_subject < 1) throw ConfigError("patches_per_subject must be at least 1");
  if (max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be at least 1");
  if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(finetune_lr < lr)) throw ConfigError("finetune_lr must be smaller than lr");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
}

nn::ModelSpec TrainConfig::model_spec() const {
  nn::ModelSpec s;
  s.backbone = backbone;
  s.mode = mode;
  s.patch = patch;
  s.init_seed = derive_seed(seed, {0x1417});
  return s;
}

NormalizationRecord cohort_ct_record(const std::vector<PairedCase>& cases) {
  if (cases.empty()) throw DataError("CT record needs at least one case");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : cases) {
    for (std::size_t i = 0; i < c.ct.size(); ++i) {
      lo = std::min(lo, static_cast<double>(c.ct[i]));
      hi = std::max(hi, static_cast<double>(c.ct[i]));
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  return {lo, hi, IntensityKind::HU};
}

PreparedCase prepare_case(const PairedCase& c, const NormalizationRecord& ct_record) {
  PreparedCase p;
  p.subject_id = c.subject_id;
  p.mri_a = minmax_normalize(c.mri_a).volume;
  p.mri_b = minmax_normalize(c.mri_b).volume;
  p.ct_norm = normalize_with(c.ct, ct_record);
  p.skull = c.skull_label;
  return p;
}

nn::FeatureMap input_patch(const Volume3D& a, const Volume3D& b, Coord3 o, Dims3 s) {
  if (!(a.dims() == b.dims())) throw DataError("MRI channels differ in dims");
  const Dims3 d = a.dims();
  if (o.x < 0 || o.y < 0 || o.z < 0 || o.x + s.x > d.x || o.y + s.y > d.y || o.z + s.z > d.z) {
    throw DataError("patch at " + to_string(o) + " of size " + to_string(s) + " leaves volume " + to_string(d));
  }
  nn::FeatureMap f{s, nn::Matrix(2, static_cast<Eigen::Index>(s.voxels()))};
  Eigen::Index v = 0;
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x, ++v) {
        const std::size_t i = linear_index(d, o.x + x, o.y + y, o.z + z);
        f.data(0, v) = a[i];
        f.data(1, v) = b[i];
      }
  return f;
}

namespace {

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.dice += b.dice;
  acc.bce += b.bce;
  acc.mse_bone += b.mse_bone;
  acc.mse_soft += b.mse_soft;
  acc.total += b.total;
  acc.region_size += b.region_size;
}

LossBreakdown mean_of(LossBreakdown acc, std::size_t n) {
  if (n == 0) return acc;
  const double k = 1.0 / static_cast<double>(n);
  acc.dice *= k;
  acc.bce *= k;
  acc.mse_bone *= k;
  acc.mse_soft *= k;
  acc.total *= k;
  acc.region_size = static_cast<std::size_t>(std::llround(static_cast<double>(acc.region_size) * k));
  return acc;
}

struct Sample {
  std::size_t subject;
  Coord3 origin;
  PatchPurpose purpose;
};

std::vector<Sample> draw_samples(const std::vector<PreparedCase>& cases, const TrainConfig& cfg, std::uint64_t stream,
                                 int epoch) {
  SamplingPolicy policy =
      cfg.mode == nn::TaskMode::Multitask ? SamplingPolicy::segmentation() : SamplingPolicy::regression();
  policy.patches_per_subject = cfg.patches_per_subject;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto origins = sample_patch_centers(cases[i].skull, cfg.patch, policy, cfg.patches_per_subject,
                                              derive_seed(cfg.seed, {stream, static_cast<std::uint64_t>(epoch), i}));
    for (const auto& s : origins) {
      out.push_back({i, s.origin, s.skull_seeded ? PatchPurpose::Regression : PatchPurpose::Segmentation});
    }
  }
  return out;
}

// Loss of one sample; fills dheads when non-null.
LossBreakdown sample_loss(const nn::Matrix& heads, const PreparedCase& c, const Sample& s, const TrainConfig& cfg,
                          nn::Matrix* dheads) {
  const PatchArray ct = extract_patch(c.ct_norm, s.origin, cfg.patch);
  if (cfg.mode == nn::TaskMode::SingleTask) {
    PatchArray grad;
    const LossBreakdown b = single_task_loss(nn::row_to_patch(heads, 0, cfg.patch), ct, dheads ? &grad : nullptr);
    if (dheads) {
      dheads->resize(1, heads.cols());
      for (Eigen::Index v = 0; v < heads.cols(); ++v) (*dheads)(0, v) = grad.values[static_cast<std::size_t>(v)];
    }
    return b;
  }
  const LossTargets targets{extract_patch(c.skull, s.origin, cfg.patch), ct};
  const nn::ModelOutputs outs = nn::split_heads(heads, cfg.patch);
  LossGradients g;
  const LossBreakdown b = s.purpose == PatchPurpose::Regression
                              ? composite_loss(outs, targets, cfg.loss, dheads ? &g : nullptr)
                              : segmentation_loss(outs, targets, cfg.loss, dheads ? &g : nullptr);
  if (dheads) {
    dheads->resize(3, heads.cols());
    for (Eigen::Index v = 0; v < heads.cols(); ++v) {
      const auto i = static_cast<std::size_t>(v);
      (*dheads)(0, v) = g.seg_logits.values[i];
      (*dheads)(1, v) = g.bone.values[i];
      (*dheads)(2, v) = g.soft.values[i];
    }
  }
  return b;
}

std::vector<PreparedCase> prepare_all(const std::vector<PairedCase>& cases, const NormalizationRecord& ct_record) {
  std::vector<PreparedCase> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(prepare_case(c, ct_record));
  return out;
}

std::optional<BinaryMask3D> training_template(const TrainConfig& cfg, const CohortSplit& cohort) {
  if (cfg.mode != nn::TaskMode::SingleTask) return std::nullopt;
  std::vector<BinaryMask3D> masks;
  for (const auto& c : cohort.train) masks.push_back(c.skull_label);
  return group_mean_template(masks);
}

TrainResult run_training(nn::UNetModel& model, const TrainConfig& cfg, const CohortSplit& cohort, double lr,
                         const NormalizationRecord& ct_record) {
  if (cohort.train.empty() || cohort.val.empty()) throw DataError("training needs non-empty train and val splits");
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_cases = prepare_all(cohort.train, ct_record);
  const auto val_cases = prepare_all(cohort.val, ct_record);

  TrainHistory h;
  nn::Adam adam(model.params(), lr);
  nn::GradBuffer grads(model.params());
  std::vector<nn::Matrix> best = model.params().values();
  std::vector<double> val_history;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto te = std::chrono::steady_clock::now();
    const auto ep = static_cast<std::uint64_t>(epoch);
    auto samples = draw_samples(train_cases, cfg, 1, epoch);
    Rng order(derive_seed(cfg.seed, {2, ep}));
    std::shuffle(samples.begin(), samples.end(), order);
    Rng drop(derive_seed(cfg.seed, {3, ep}));

    EpochRecord rec;
    rec.epoch = epoch;
    LossBreakdown train_acc;
    int step = 0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < samples.size(); start += bs) {
      const std::size_t end = std::min(samples.size(), start + bs);
      grads.zero();
      LossBreakdown batch_acc;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = samples[k];
        const PreparedCase& c = train_cases[s.subject];
        const nn::FeatureMap in = input_patch(c.mri_a, c.mri_b, s.origin, cfg.patch);
        model.train_step(in, &drop, [&](const nn::Matrix& heads) {
          nn::Matrix dheads;
          const LossBreakdown b = sample_loss(heads, c, s, cfg, &dheads);
          accumulate(batch_acc, b);
          return dheads;
        }, grads);
      }
      const std::size_t n = end - start;
      const LossBreakdown batch_mean = mean_of(batch_acc, n);
      ++step;
      h.steps.push_back({epoch, step, batch_mean});
      if (!std::isfinite(batch_mean.total)) {
        h.stopped_epoch = epoch;
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step),
                              std::move(h));
      }
      accumulate(train_acc, batch_acc);
      rec.train_samples += n;
      grads.scale(1.0 / static_cast<double>(n));
      adam.step(model.params(), grads);
    }
    rec.train = mean_of(train_acc, rec.train_samples);

    const auto val_samples = draw_samples(val_cases, cfg, 4, epoch);
    LossBreakdown val_acc;
    for (const Sample& s : val_samples) {
      const PreparedCase& c = val_cases[s.subject];
      const nn::Matrix heads = model.forward(input_patch(c.mri_a, c.mri_b, s.origin, cfg.patch));
      accumulate(val_acc, sample_loss(heads, c, s, cfg, nullptr));
    }
    rec.val_samples = val_samples.size();
    rec.val = mean_of(val_acc, rec.val_samples);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - te).count();
    h.epochs.push_back(rec);
    h.stopped_epoch = epoch;
    val_history.push_back(rec.val.total);
    if (!std::isfinite(rec.val.total)) {
      throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch), std::move(h));
    }
    if (h.best_epoch == 0 || rec.val.total < h.best_val) {
      h.best_epoch = epoch;
      h.best_val = rec.val.total;
      best = model.params().values();
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  model.params().assign(best);
  h.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  TrainResult r{snapshot(model, h.best_epoch, cfg.seed), std::move(h)};
  r.checkpoint.val_history = std::move(val_history);
  r.checkpoint.template_mask = training_template(cfg, cohort);
  r.checkpoint.ct_record = ct_record;
  return r;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const CohortSplit& cohort) {
  cfg.validate();
  if (cohort.train.empty()) throw DataError("training needs non-empty train and val splits");
  nn::UNetModel model(cfg.model_spec());
  return run_training(model, cfg, cohort, cfg.lr, cohort_ct_record(cohort.train));
}

TrainResult finetune(const Checkpoint& ckpt, const CohortSplit& cohort, const TrainConfig& cfg) {
  cfg.validate();
  const nn::ModelSpec want = cfg.model_spec();
  if (ckpt.spec.digest() != want.digest()) {
    throw ConfigError("checkpoint config digest " + ckpt.spec.digest() + " does not match the fine-tuning config " +
                      want.digest());
  }
  auto model = instantiate(ckpt);
  return run_training(*model, cfg, cohort, cfg.finetune_lr, ckpt.ct_record);
}

void write_history(std::ostream& os, const TrainHistory& h) {
  os << "epoch\ttrain_samples\ttrain_total\ttrain_dice\ttrain_bce\ttrain_mse_bone\ttrain_mse_soft\tval_samples\t"
        "val_total\tval_dice\tval_bce\tval_mse_bone\tval_mse_soft\tseconds\n";
  os << std::setprecision(8);
  for (const auto& e : h.epochs) {
    os << e.epoch << '\t' << e.train_samples << '\t' << e.train.total << '\t' << e.train.dice << '\t' << e.train.bce
       << '\t' << e.train.mse_bone << '\t' << e.train.mse_soft << '\t' << e.val_samples << '\t' << e.val.total << '\t'
       << e.val.dice << '\t' << e.val.bce << '\t' << e.val.mse_bone << '\t' << e.val.mse_soft << '\t' << e.seconds
       << '\n';
  }
  os << "# best_epoch " << h.best_epoch << " best_val " << h.best_val << " stopped_epoch " << h.stopped_epoch
     << " wall_seconds " << h.wall_seconds << '\n';
}

void write_step_log(std::ostream& os, const TrainHistory& h) {
  os << "epoch\tstep\tdice\tbce\tmse_bone\tmse_soft\ttotal\tregion_size\n" << std::setprecision(8);
  for (const auto& s : h.steps) {
    os << s.epoch << '\t' << s.step << '\t' << s.loss.dice << '\t' << s.loss.bce << '\t' << s.loss.mse_bone << '\t'
       << s.loss.mse_soft << '\t' << s.loss.total << '\t' << s.loss.region_size << '\n';
  }
}

namespace {

double to_hu(double v, const NormalizationRecord& rec) {
  return std::clamp(rec.vmin + v * (rec.vmax - rec.vmin), static_cast<double>(kHuFloor),
                    static_cast<double>(kHuCeiling));
}

}  // namespace

SynthesisResult synthesize_sct(const PatchPredictor& predictor, const Volume3D& mri_a, const Volume3D& mri_b,
                               const SynthesisOptions& opts) {
  const Dims3 dims = mri_a.dims();
  const Dims3 patch = predictor.patch();
  const PatchGrid grid = build_patch_grid(dims, patch, opts.stride);
  const Volume3D a = minmax_normalize(mri_a).volume;
  const Volume3D b = minmax_normalize(mri_b).volume;
  const NormalizationRecord& ct_rec = opts.ct_record;
  if (!(ct_rec.vmax > ct_rec.vmin)) throw ConfigError("CT record must span a positive range");
  const bool multitask = predictor.mode() == nn::TaskMode::Multitask;
  if (!multitask && !opts.template_mask) throw ConfigError("single-task synthesis needs a template mask");
  if (opts.reference_mask && !(opts.reference_mask->dims() == dims)) throw DataError("reference mask dims differ");

  std::vector<PlacedPatch> sct_patches, prob_patches;
  sct_patches.reserve(grid.n_patch());
  for (const Coord3& o : grid.origins) {
    const nn::Matrix heads = predictor.predict(input_patch(a, b, o, patch), o);
    PatchArray fused;
    if (multitask) {
      const nn::ModelOutputs outs = nn::split_heads(heads, patch);
      PatchArray prob{patch, std::vector<double>(outs.seg_logits.values.size())};
      for (std::size_t i = 0; i < prob.values.size(); ++i) prob.values[i] = nn::sigmoid(outs.seg_logits.values[i]);
      fused = opts.reference_mask ? nn::fuse_with_mask(outs, extract_patch(*opts.reference_mask, o, patch))
                                  : nn::fuse_outputs(outs, opts.seg_threshold);
      prob_patches.push_back({o, std::move(prob)});
    } else {
      fused = nn::row_to_patch(heads, 0, patch);
    }
    for (double& v : fused.values) v = to_hu(v, ct_rec);
    sct_patches.push_back({o, std::move(fused)});
  }

  SynthesisResult r;
  const Volume3D raw = reconstruct(sct_patches, dims, IntensityKind::HU);
  if (multitask) {
    r.sct = raw;
    r.seg_probability = reconstruct(prob_patches, dims, IntensityKind::Arbitrary);
    r.skull_mask = BinaryMask3D(dims);
    for (std::size_t i = 0; i < r.seg_probability.size(); ++i) {
      r.skull_mask.set(i, r.seg_probability[i] > opts.seg_threshold);
    }
  } else {
    PostprocessedSct pp = postprocess_single_task(raw, *opts.template_mask, opts.hu_threshold);
    r.skull_mask = std::move(pp.skull_mask);
    if (opts.reference_mask) {
      const BinaryMask3D ref_template = binary_dilate(*opts.reference_mask, StructuringElement{}, 1);
      r.sct = postprocess_single_task(raw, ref_template, opts.hu_threshold).sct;
    } else {
      r.sct = std::move(pp.sct);
    }
  }
  return r;
}

std::vector<MetricsRecord> evaluate(const PatchPredictor& predictor, const BinaryMask3D* template_mask,
                                    const std::vector<PairedCase>& cases, const EvaluateOptions& opts) {
  if (cases.empty()) throw DataError("evaluation needs at least one case");
  std::vector<MetricsRecord> out(cases.size());
  auto run_one = [&](std::size_t i) {
    const PairedCase& c = cases[i];
    SynthesisOptions so;
    so.stride = opts.stride;
    so.template_mask = template_mask;
    so.reference_mask = opts.use_gt_mask_reference ? &c.skull_label : nullptr;
    so.ct_record = opts.ct_record;
    const SynthesisResult s = synthesize_sct(predictor, c.mri_a, c.mri_b, so);
    out[i] = compute_metrics(c.subject_id, s.sct, s.skull_mask, c.ct, c.skull_label);
  };
  const std::size_t jobs = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, opts.jobs)), 1, cases.size());
  if (jobs == 1) {
    for (std::size_t i = 0; i < cases.size(); ++i) run_one(i);
    return out;
  }
  std::mutex mu;
  std::exception_ptr first_error;
  std::size_t next = 0;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= cases.size() || first_error) return;
          i = next++;
        }
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

std::vector<MetricsRecord> evaluate(const Checkpoint& ckpt, const std::vector<PairedCase>& cases,
                                    const EvaluateOptions& opts) {
  const auto model = instantiate(ckpt);
  const ModelPredictor predictor(*model);
  const BinaryMask3D* tmpl = ckpt.template_mask ? &*ckpt.template_mask : nullptr;
  EvaluateOptions o = opts;
  o.ct_record = ckpt.ct_record;
  return evaluate(predictor, tmpl, cases, o);
}

}  // namespace mtsct
