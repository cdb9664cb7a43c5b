#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mtsct/metrics.hpp"

namespace mtsct {

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Linear-interpolated quartiles of the finite values.
BoxStats box_stats(std::vector<double> values);

/// Side-by-side boxplots of one metric, one box per labelled group.
void write_boxplot_svg(const std::filesystem::path& path, const std::string& metric,
                       const std::vector<std::string>& labels, const std::vector<std::vector<double>>& groups);

/// Mean relative gain per metric with its confidence interval as a horizontal bar.
void write_gain_dotplot_svg(const std::filesystem::path& path, const std::vector<ComparisonReport>& reports);

}  // namespace mtsct
