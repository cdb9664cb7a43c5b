#include <gtest/gtest.h>

#include <sstream>

#include "mtsct/training.hpp"
#include "test_util.hpp"

using namespace mtsct;
using namespace mtsct::testing;

namespace {

PhantomSpec spec32() {
  PhantomSpec s;
  s.dims = {32, 32, 32};
  return s;
}

TrainConfig small_config(nn::TaskMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  c.patch = {16, 16, 16};
  c.backbone.levels = 3;
  c.backbone.base_width = 4;
  c.patches_per_subject = 16;
  c.max_epochs = 12;
  c.early_stop_patience = 12;
  c.seed = seed;
  return c;
}

const CohortSplit& shared_cohort() {
  static const CohortSplit c = generate_cohort(spec32(), 12, 21);
  return c;
}

// Trained once and reused by the tests that only need some fitted model.
const TrainResult& shared_multitask() {
  static const TrainResult r = train(small_config(nn::TaskMode::Multitask, 3), shared_cohort());
  return r;
}

bool same_params(const Checkpoint& a, const Checkpoint& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i] != b.params[i]) return false;
  return true;
}

// Emits the ground truth of one case: +-30 logits from the skull label and the CT scaled by a record
// whose range is a power of two, so normalization and its inverse are exact.
class OracleStub : public PatchPredictor {
 public:
  OracleStub(const PairedCase& c, Dims3 patch, const NormalizationRecord& rec) : c_(c), patch_(patch), rec_(rec) {}
  nn::TaskMode mode() const override { return nn::TaskMode::Multitask; }
  Dims3 patch() const override { return patch_; }
  nn::Matrix predict(const nn::FeatureMap&, Coord3 o) const override {
    nn::Matrix heads(3, static_cast<Eigen::Index>(patch_.voxels()));
    Eigen::Index v = 0;
    for (int z = 0; z < patch_.z; ++z)
      for (int y = 0; y < patch_.y; ++y)
        for (int x = 0; x < patch_.x; ++x, ++v) {
          const int X = o.x + x, Y = o.y + y, Z = o.z + z;
          const double hu = c_.ct.at(X, Y, Z);
          const double norm = (hu - rec_.vmin) / (rec_.vmax - rec_.vmin);
          heads(0, v) = c_.skull_label.at(X, Y, Z) ? 30.0 : -30.0;
          heads(1, v) = norm;
          heads(2, v) = norm;
        }
    return heads;
  }

 private:
  const PairedCase& c_;
  Dims3 patch_;
  NormalizationRecord rec_;
};

}  // namespace

TEST(Training, EpochAccountingAndDeterminism) {
  const CohortSplit& full = shared_cohort();
  CohortSplit small{{full.train[0], full.train[1]}, {full.val[0]}, {}};
  TrainConfig cfg = small_config(nn::TaskMode::Multitask, 9);
  cfg.max_epochs = 2;
  cfg.patches_per_subject = 10;
  const TrainResult a = train(cfg, small);
  ASSERT_EQ(a.history.epochs.size(), 2u);
  for (const auto& e : a.history.epochs) {
    EXPECT_EQ(e.train_samples, 20u);
    EXPECT_EQ(e.val_samples, 10u);
  }
  EXPECT_EQ(a.history.steps.size(), 2u * 5u);  // batch size 4 over 20 samples
  EXPECT_GE(a.history.best_epoch, 1);
  EXPECT_EQ(a.checkpoint.epoch, a.history.best_epoch);
  EXPECT_EQ(a.checkpoint.val_history.size(), 2u);
  const TrainResult b = train(cfg, small);
  EXPECT_TRUE(same_params(a.checkpoint, b.checkpoint));
  EXPECT_EQ(a.checkpoint.val_history, b.checkpoint.val_history);
  cfg.seed = 10;
  const TrainResult c = train(cfg, small);
  EXPECT_FALSE(same_params(a.checkpoint, c.checkpoint));

  std::ostringstream hist, steps;
  write_history(hist, a.history);
  write_step_log(steps, a.history);
  const std::string h = hist.str();
  EXPECT_EQ(std::count(h.begin(), h.end(), '\n'), 4);
  const std::string s = steps.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 11);
  EXPECT_EQ(s.substr(0, s.find('\n')), "epoch\tstep\tdice\tbce\tmse_bone\tmse_soft\ttotal\tregion_size");
}

TEST(Training, SingleTaskStoresTemplate) {
  const CohortSplit& full = shared_cohort();
  CohortSplit small{{full.train[0], full.train[1]}, {full.val[0]}, {}};
  TrainConfig cfg = small_config(nn::TaskMode::SingleTask, 9);
  cfg.max_epochs = 1;
  cfg.patches_per_subject = 4;
  const TrainResult r = train(cfg, small);
  ASSERT_TRUE(r.checkpoint.template_mask.has_value());
  EXPECT_EQ(r.checkpoint.template_mask->dims(), full.train[0].ct.dims());
  EXPECT_GT(r.checkpoint.template_mask->count(), 0u);
  EXPECT_EQ(r.history.epochs[0].train.mse_bone, 0.0);
}

TEST(Training, ValidationLossHalvesAndBestIsNotAfterStop) {
  const TrainResult& r = shared_multitask();
  ASSERT_EQ(r.history.epochs.size(), 12u);
  const double first = r.history.epochs.front().val.total;
  EXPECT_LE(r.history.best_val, 0.5 * first) << "epoch-1 val " << first << " best " << r.history.best_val;
  double best = first;
  for (const auto& e : r.history.epochs) {
    best = std::min(best, e.val.total);
    EXPECT_GE(e.val.total, r.history.best_val);
  }
  EXPECT_EQ(best, r.history.best_val);
  EXPECT_LE(r.history.best_epoch, r.history.stopped_epoch);
  const NormalizationRecord rec = cohort_ct_record(shared_cohort().train);
  EXPECT_EQ(r.checkpoint.ct_record.vmin, rec.vmin);
  EXPECT_EQ(r.checkpoint.ct_record.vmax, rec.vmax);
}

TEST(Training, EarlyStoppingHonoursPatience) {
  const CohortSplit& full = shared_cohort();
  CohortSplit small{{full.train[0]}, {full.val[0]}, {}};
  TrainConfig cfg = small_config(nn::TaskMode::Multitask, 4);
  cfg.lr = 0.5;  // far too large: validation stops improving quickly
  cfg.finetune_lr = 0.1;
  cfg.max_epochs = 30;
  cfg.early_stop_patience = 2;
  cfg.patches_per_subject = 4;
  try {
    const TrainResult r = train(cfg, small);
    EXPECT_LE(r.history.stopped_epoch - r.history.best_epoch, 2);
    EXPECT_LT(r.history.stopped_epoch, 30);
  } catch (const DivergenceError& e) {
    EXPECT_FALSE(e.history.epochs.empty() && e.history.steps.empty());
  }
}

TEST(Finetune, ZeroEpochsKeepsParametersAndDigestIsChecked) {
  const TrainResult& src = shared_multitask();
  TrainConfig cfg = small_config(nn::TaskMode::Multitask, 77);
  cfg.max_epochs = 0;
  const TrainResult r = finetune(src.checkpoint, shared_cohort(), cfg);
  EXPECT_TRUE(same_params(r.checkpoint, src.checkpoint));
  EXPECT_EQ(r.checkpoint.ct_record.vmin, src.checkpoint.ct_record.vmin);
  TrainConfig other = cfg;
  other.backbone.state_dim = 4;
  EXPECT_THROW(finetune(src.checkpoint, shared_cohort(), other), ConfigError);
  other = cfg;
  other.mode = nn::TaskMode::SingleTask;
  EXPECT_THROW(finetune(src.checkpoint, shared_cohort(), other), ConfigError);
}

TEST(Finetune, WarmStartOnSourceDoesNotRaiseBestValidationLoss) {
  const TrainResult& src = shared_multitask();
  TrainConfig cfg = small_config(nn::TaskMode::Multitask, 3);
  cfg.max_epochs = 3;
  const TrainResult r = finetune(src.checkpoint, shared_cohort(), cfg);
  // same seed: epoch e draws the same validation patches as the source run's epoch e
  const double src_first_epochs = std::min({src.history.epochs[0].val.total, src.history.epochs[1].val.total,
                                            src.history.epochs[2].val.total});
  EXPECT_LE(r.history.best_val, src_first_epochs);
  EXPECT_LE(r.history.best_val, src.history.best_val * 1.05);
}

TEST(Synthesis, OracleStubReproducesCtExactly) {
  const CohortSplit& c = shared_cohort();
  const NormalizationRecord rec{-1024.0, 3072.0, IntensityKind::HU};
  for (const PairedCase* pc : {&c.test[0], &c.val[0]}) {
    const OracleStub stub(*pc, {16, 16, 16}, rec);
    for (Dims3 stride : {Dims3{16, 16, 16}, Dims3{8, 8, 8}, Dims3{5, 7, 6}}) {
      SynthesisOptions o;
      o.stride = stride;
      o.ct_record = rec;
      const SynthesisResult s = synthesize_sct(stub, pc->mri_a, pc->mri_b, o);
      ASSERT_EQ(s.sct.dims(), pc->ct.dims());
      for (std::size_t i = 0; i < s.sct.size(); ++i) ASSERT_EQ(s.sct[i], pc->ct[i]) << i;
      EXPECT_EQ(s.skull_mask, pc->skull_label);
    }
    EvaluateOptions eo;
    eo.ct_record = rec;
    eo.stride = {8, 8, 8};
    const auto m = evaluate(stub, nullptr, {*pc}, eo);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].dice, 1.0);
    EXPECT_EQ(m[0].jaccard, 1.0);
    EXPECT_EQ(m[0].mae_bone_hu, 0.0);
    EXPECT_EQ(m[0].mae_brain_hu, 0.0);
    EXPECT_EQ(m[0].psnr_db, kPsnrInfinite);
    EXPECT_NEAR(m[0].pearson, 1.0, 1e-12);
  }
}

TEST(Synthesis, OverlapOnlyChangesOverlappingVoxels) {
  const TrainResult& r = shared_multitask();
  const auto model = instantiate(r.checkpoint);
  const ModelPredictor pred(*model);
  const PairedCase& pc = shared_cohort().test[0];
  SynthesisOptions o;
  o.ct_record = r.checkpoint.ct_record;
  o.stride = {16, 16, 16};
  const SynthesisResult tiled = synthesize_sct(pred, pc.mri_a, pc.mri_b, o);
  o.stride = {8, 8, 8};
  const SynthesisResult overlapped = synthesize_sct(pred, pc.mri_a, pc.mri_b, o);
  ASSERT_EQ(tiled.sct.dims(), pc.ct.dims());
  ASSERT_EQ(tiled.seg_probability.dims(), pc.ct.dims());
  auto edge = [](int v) { return v < 8 || v >= 24; };
  std::size_t differing = 0;
  const Dims3 d = pc.ct.dims();
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const auto i = linear_index(d, x, y, z);
        if (edge(x) && edge(y) && edge(z)) {
          ASSERT_EQ(tiled.sct[i], overlapped.sct[i]);
        } else {
          differing += tiled.sct[i] != overlapped.sct[i];
        }
      }
  EXPECT_GT(differing, 0u);
}

TEST(Evaluate, ReferenceMaskChangesOnlyIntensityMetrics) {
  const TrainResult& r = shared_multitask();
  EvaluateOptions o;
  o.stride = {8, 8, 8};
  const auto& test = shared_cohort().test;
  const auto pred = evaluate(r.checkpoint, test, o);
  o.use_gt_mask_reference = true;
  const auto ref = evaluate(r.checkpoint, test, o);
  ASSERT_EQ(pred.size(), ref.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    EXPECT_EQ(pred[i].dice, ref[i].dice);
    EXPECT_EQ(pred[i].jaccard, ref[i].jaccard);
    EXPECT_NE(pred[i].mae_bone_hu, ref[i].mae_bone_hu);
    EXPECT_GT(pred[i].dice, 0.5);
  }
  o.jobs = 2;
  const auto par = evaluate(r.checkpoint, shared_cohort().val, o);
  o.jobs = 1;
  const auto ser = evaluate(r.checkpoint, shared_cohort().val, o);
  for (std::size_t i = 0; i < par.size(); ++i) EXPECT_EQ(par[i].mae_bone_hu, ser[i].mae_bone_hu);
  EXPECT_THROW(evaluate(r.checkpoint, {}, o), DataError);
}

TEST(Synthesis, Errors) {
  const TrainResult& r = shared_multitask();
  const auto model = instantiate(r.checkpoint);
  const ModelPredictor pred(*model);
  const PairedCase& pc = shared_cohort().test[0];
  SynthesisOptions o;
  o.ct_record = {0.0, 0.0, IntensityKind::HU};
  EXPECT_THROW(synthesize_sct(pred, pc.mri_a, pc.mri_b, o), ConfigError);
  TrainConfig cfg = small_config(nn::TaskMode::SingleTask, 1);
  nn::UNetModel single(cfg.model_spec());
  const ModelPredictor sp(single);
  EXPECT_THROW(synthesize_sct(sp, pc.mri_a, pc.mri_b, SynthesisOptions{}), ConfigError);
  EXPECT_THROW(cohort_ct_record({}), DataError);
  TrainConfig bad = cfg;
  bad.finetune_lr = bad.lr;
  EXPECT_THROW(bad.validate(), ConfigError);
}
