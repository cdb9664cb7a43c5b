#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mtsct/volume.hpp"

namespace mtsct {

struct MetricsRecord {
  std::string subject_id;
  double pearson = 0.0;
  double spearman = 0.0;
  double dice = 0.0;
  double jaccard = 0.0;
  double ssim = 0.0;
  double psnr_db = 0.0;
  double mae_bone_hu = 0.0;
  double mae_brain_hu = 0.0;
};

/// Metric columns in table order.
const std::vector<std::string>& metric_names();
double metric_value(const MetricsRecord& r, const std::string& name);
void set_metric_value(MetricsRecord& r, const std::string& name, double v);
bool metric_higher_is_better(const std::string& name);

struct DiceJaccard {
  double dice = 0.0;
  double jaccard = 0.0;
};

/// Both masks empty gives (1, 1).
DiceJaccard dice_jaccard(const BinaryMask3D& a, const BinaryMask3D& b);

/// Throws NumericalError when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);
/// 1-based ranks; ties share their average rank.
std::vector<double> midranks(std::span<const double> v);

struct SsimOptions {
  int window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over all valid window positions with uniform windows and population statistics.
double ssim3d(Dims3 dims, std::span<const double> a, std::span<const double> b, double data_range,
              SsimOptions opts = {});

inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();
/// 10 log10(L^2 / MSE); identical inputs give kPsnrInfinite.
double psnr(std::span<const double> a, std::span<const double> b, double data_range);

/// Mean |a - b| over region voxels; an empty region throws DataError.
double mae_region(std::span<const double> a, std::span<const double> b, const BinaryMask3D& region);

std::vector<double> to_doubles(const Volume3D& v);

/// Whole-volume intensity metrics against the reference CT, bone MAE on the reference skull mask,
/// brain MAE on CT > -500, overlap metrics between predicted and reference masks.
MetricsRecord compute_metrics(const std::string& subject_id, const Volume3D& sct, const BinaryMask3D& pred_mask,
                              const Volume3D& ct, const BinaryMask3D& gt_mask);

inline constexpr double kBrainThresholdHu = -500.0;

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};

/// Two-sided paired t-test on x - y. Zero-variance differences throw NumericalError.
TTestResult paired_t_test(std::span<const double> x, std::span<const double> y);

struct ComparisonReport {
  std::string metric;
  double mean_single = 0.0;
  double mean_multi = 0.0;
  double p_value = 1.0;
  double t_stat = 0.0;
  bool test_degenerate = false;
  double relative_gain_pct = 0.0;
  double ci_low_pct = 0.0;
  double ci_high_pct = 0.0;
  std::size_t excluded = 0;  ///< pairs dropped because the single-task value was 0
};

/// Per-subject gain (multi - single) / single * 100, sign-flipped when lower is better; CI = mean +- 1.96 SE.
ComparisonReport relative_gain(std::span<const double> single, std::span<const double> multi, bool higher_is_better);

/// relative_gain plus a paired t-test for every metric column. Infinite PSNR pairs are dropped from that column.
std::vector<ComparisonReport> compare_records(const std::vector<MetricsRecord>& single,
                                              const std::vector<MetricsRecord>& multi);

// Tab-separated tables: one row per subject plus an average row; comparison rows hold mean, CI, p and gain.
void write_metrics_table(std::ostream& os, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_table(std::istream& is);
void write_comparison_table(std::ostream& os, const std::vector<ComparisonReport>& reports);

}  // namespace mtsct
