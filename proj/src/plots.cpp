#include "mtsct/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mtsct {

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - f) + sorted[hi] * f;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return {};
  std::sort(values.begin(), values.end());
  return {values.front(), quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75), values.back()};
}

void write_boxplot_svg(const std::filesystem::path& path, const std::string& metric,
                       const std::vector<std::string>& labels, const std::vector<std::vector<double>>& groups) {
  const double width = 120.0 + 140.0 * static_cast<double>(groups.size()), height = 360.0;
  const double top = 40.0, bottom = 310.0;
  std::vector<BoxStats> stats;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& g : groups) {
    stats.push_back(box_stats(g));
    for (double v : g) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto ypix = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << metric << "</text>\n";
  s << "<line x1=\"70\" y1=\"" << top << "\" x2=\"70\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s << "<text x=\"64\" y=\"" << ypix(v) + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52"};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double cx = 140.0 + 140.0 * static_cast<double>(g);
    const auto& b = stats[g];
    const char* c = colors[g % 4];
    s << "<line x1=\"" << cx << "\" y1=\"" << ypix(b.min) << "\" x2=\"" << cx << "\" y2=\"" << ypix(b.max)
      << "\" stroke=\"black\"/>\n";
    s << "<rect x=\"" << cx - 30 << "\" y=\"" << ypix(b.q3) << "\" width=\"60\" height=\""
      << std::max(1.0, ypix(b.q1) - ypix(b.q3)) << "\" fill=\"" << c << "\" fill-opacity=\"0.6\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << cx - 30 << "\" y1=\"" << ypix(b.median) << "\" x2=\"" << cx + 30 << "\" y2=\""
      << ypix(b.median) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double v : groups[g]) {
      if (std::isfinite(v)) s << "<circle cx=\"" << cx + 38 << "\" cy=\"" << ypix(v) << "\" r=\"2\" fill=\"" << c << "\"/>\n";
    }
    s << "<text x=\"" << cx << "\" y=\"" << bottom + 20 << "\" text-anchor=\"middle\">"
      << (g < labels.size() ? labels[g] : "") << "</text>\n";
  }
  s << "</svg>\n";
  write_file(path, s.str());
}

void write_gain_dotplot_svg(const std::filesystem::path& path, const std::vector<ComparisonReport>& reports) {
  const double row = 28.0, left = 130.0, right = 560.0, top = 40.0;
  const double height = top + row * static_cast<double>(reports.size()) + 50.0;
  double lo = 0.0, hi = 0.0;
  for (const auto& r : reports) {
    for (double v : {r.ci_low_pct, r.ci_high_pct, r.relative_gain_pct}) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-9) lo -= 1.0, hi += 1.0;
  const double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto xpix = [&](double v) { return left + (v - lo) / (hi - lo) * (right - left); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"300\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">relative gain, multitask vs single-task (%)</text>\n";
  const double axis_y = top + row * static_cast<double>(reports.size());
  s << "<line x1=\"" << xpix(0) << "\" y1=\"" << top - 10 << "\" x2=\"" << xpix(0) << "\" y2=\"" << axis_y
    << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << axis_y << "\" x2=\"" << right << "\" y2=\"" << axis_y
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s << "<text x=\"" << xpix(v) << "\" y=\"" << axis_y + 16 << "\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const double y = top + row * (static_cast<double>(i) + 0.5);
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << r.metric << "</text>\n";
    s << "<line x1=\"" << xpix(r.ci_low_pct) << "\" y1=\"" << y << "\" x2=\"" << xpix(r.ci_high_pct) << "\" y2=\"" << y
      << "\" stroke=\"#4c72b0\" stroke-width=\"2\"/>\n";
    s << "<circle cx=\"" << xpix(r.relative_gain_pct) << "\" cy=\"" << y << "\" r=\"4\" fill=\"#c44e52\"/>\n";
  }
  s << "</svg>\n";
  write_file(path, s.str());
}

}  // namespace mtsct
