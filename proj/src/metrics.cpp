#include "mtsct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

namespace mtsct {

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"pearson", "spearman", "dice",        "jaccard",
                                              "ssim",    "psnr_db",  "mae_bone_hu", "mae_brain_hu"};
  return names;
}

double metric_value(const MetricsRecord& r, const std::string& name) {
  if (name == "pearson") return r.pearson;
  if (name == "spearman") return r.spearman;
  if (name == "dice") return r.dice;
  if (name == "jaccard") return r.jaccard;
  if (name == "ssim") return r.ssim;
  if (name == "psnr_db") return r.psnr_db;
  if (name == "mae_bone_hu") return r.mae_bone_hu;
  if (name == "mae_brain_hu") return r.mae_brain_hu;
  throw ConfigError("unknown metric '" + name + "'");
}

void set_metric_value(MetricsRecord& r, const std::string& name, double v) {
  if (name == "pearson") r.pearson = v;
  else if (name == "spearman") r.spearman = v;
  else if (name == "dice") r.dice = v;
  else if (name == "jaccard") r.jaccard = v;
  else if (name == "ssim") r.ssim = v;
  else if (name == "psnr_db") r.psnr_db = v;
  else if (name == "mae_bone_hu") r.mae_bone_hu = v;
  else if (name == "mae_brain_hu") r.mae_brain_hu = v;
  else throw ConfigError("unknown metric '" + name + "'");
}

bool metric_higher_is_better(const std::string& name) { return name.rfind("mae", 0) != 0; }

namespace {

void require_same(std::size_t a, std::size_t b) {
  if (a != b) throw DataError("metric inputs differ in size (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

}  // namespace

DiceJaccard dice_jaccard(const BinaryMask3D& a, const BinaryMask3D& b) {
  if (!(a.dims() == b.dims())) throw DataError("mask dims differ");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    both += a[i] && b[i];
  }
  if (na + nb == 0) return {1.0, 1.0};
  const double dice = 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
  const double jaccard = static_cast<double>(both) / static_cast<double>(na + nb - both);
  return {dice, jaccard};
}

double pearson(std::span<const double> a, std::span<const double> b) {
  require_same(a.size(), b.size());
  if (a.size() < 2) throw NumericalError("correlation needs at least two values");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw NumericalError("correlation is undefined for a zero-variance input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i + 1;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = rank;
    i = j;
  }
  return r;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  require_same(a.size(), b.size());
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  return pearson(ra, rb);
}

namespace {

// Summed-area table with a zero border: S(x, y, z) = sum over [0, x) x [0, y) x [0, z).
class Integral3 {
 public:
  Integral3(Dims3 d, const std::vector<double>& v) : d_(d), s_(static_cast<std::size_t>(d.x + 1) * (d.y + 1) * (d.z + 1), 0.0) {
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) {
          s_[idx(x + 1, y + 1, z + 1)] = v[linear_index(d, x, y, z)] + s_[idx(x, y + 1, z + 1)] +
                                         s_[idx(x + 1, y, z + 1)] + s_[idx(x + 1, y + 1, z)] - s_[idx(x, y, z + 1)] -
                                         s_[idx(x, y + 1, z)] - s_[idx(x + 1, y, z)] + s_[idx(x, y, z)];
        }
  }

  double box(int x, int y, int z, int w) const {
    const int X = x + w, Y = y + w, Z = z + w;
    return s_[idx(X, Y, Z)] - s_[idx(x, Y, Z)] - s_[idx(X, y, Z)] - s_[idx(X, Y, z)] + s_[idx(x, y, Z)] +
           s_[idx(x, Y, z)] + s_[idx(X, y, z)] - s_[idx(x, y, z)];
  }

 private:
  std::size_t idx(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(d_.x + 1) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(d_.y + 1) * z);
  }
  Dims3 d_;
  std::vector<double> s_;
};

}  // namespace

double ssim3d(Dims3 dims, std::span<const double> a, std::span<const double> b, double data_range, SsimOptions o) {
  require_same(a.size(), b.size());
  require_same(a.size(), dims.voxels());
  if (!(data_range > 0.0)) throw DataError("ssim data_range must be positive");
  const int w = o.window;
  if (w < 1 || w > dims.x || w > dims.y || w > dims.z) {
    throw DataError("ssim window " + std::to_string(w) + " exceeds volume " + to_string(dims));
  }
  // Center both inputs on a shared offset; SSIM only sees the offset through the means, which are restored below.
  const std::size_t n = a.size();
  std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end()), aa(n), bb(n), ab(n);
  const double shift = 0.5 * (std::accumulate(va.begin(), va.end(), 0.0) + std::accumulate(vb.begin(), vb.end(), 0.0)) /
                       static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    va[i] -= shift;
    vb[i] -= shift;
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const Integral3 sa(dims, va), sb(dims, vb), saa(dims, aa), sbb(dims, bb), sab(dims, ab);
  const double c1 = (o.k1 * data_range) * (o.k1 * data_range);
  const double c2 = (o.k2 * data_range) * (o.k2 * data_range);
  const double inv = 1.0 / (static_cast<double>(w) * w * w);
  double total = 0.0;
  std::size_t count = 0;
  for (int z = 0; z + w <= dims.z; ++z)
    for (int y = 0; y + w <= dims.y; ++y)
      for (int x = 0; x + w <= dims.x; ++x) {
        const double ma0 = sa.box(x, y, z, w) * inv, mb0 = sb.box(x, y, z, w) * inv;
        const double var_a = std::max(0.0, saa.box(x, y, z, w) * inv - ma0 * ma0);
        const double var_b = std::max(0.0, sbb.box(x, y, z, w) * inv - mb0 * mb0);
        const double cov = sab.box(x, y, z, w) * inv - ma0 * mb0;
        const double ma = ma0 + shift, mb = mb0 + shift;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

double psnr(std::span<const double> a, std::span<const double> b, double data_range) {
  require_same(a.size(), b.size());
  if (a.empty()) throw DataError("psnr of empty inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrInfinite;
  return 10.0 * std::log10(data_range * data_range / mse);
}

double mae_region(std::span<const double> a, std::span<const double> b, const BinaryMask3D& region) {
  require_same(a.size(), b.size());
  require_same(a.size(), region.size());
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!region[i]) continue;
    s += std::abs(a[i] - b[i]);
    ++n;
  }
  if (n == 0) throw DataError("mae over an empty region");
  return s / static_cast<double>(n);
}

std::vector<double> to_doubles(const Volume3D& v) { return {v.data().begin(), v.data().end()}; }

MetricsRecord compute_metrics(const std::string& subject_id, const Volume3D& sct, const BinaryMask3D& pred_mask,
                              const Volume3D& ct, const BinaryMask3D& gt_mask) {
  if (!(sct.dims() == ct.dims())) throw DataError("sCT dims " + to_string(sct.dims()) + " differ from CT dims");
  const auto p = to_doubles(sct);
  const auto g = to_doubles(ct);
  const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) throw DataError("reference CT of " + subject_id + " is constant");
  MetricsRecord r;
  r.subject_id = subject_id;
  r.pearson = pearson(p, g);
  r.spearman = spearman(p, g);
  const auto dj = dice_jaccard(pred_mask, gt_mask);
  r.dice = dj.dice;
  r.jaccard = dj.jaccard;
  r.ssim = ssim3d(ct.dims(), p, g, range);
  r.psnr_db = psnr(p, g, range);
  r.mae_bone_hu = mae_region(p, g, gt_mask);
  r.mae_brain_hu = mae_region(p, g, threshold_mask(ct, kBrainThresholdHu));
  return r;
}

TTestResult paired_t_test(std::span<const double> x, std::span<const double> y) {
  require_same(x.size(), y.size());
  const std::size_t n = x.size();
  if (n < 2) throw NumericalError("paired t-test needs at least two pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = x[i] - y[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw NumericalError("paired t-test is degenerate: differences have zero variance");
  TTestResult r;
  r.df = n - 1;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

ComparisonReport relative_gain(std::span<const double> single, std::span<const double> multi, bool higher_is_better) {
  require_same(single.size(), multi.size());
  ComparisonReport rep;
  std::vector<double> gains;
  for (std::size_t i = 0; i < single.size(); ++i) {
    if (single[i] == 0.0) {
      ++rep.excluded;
      continue;
    }
    double g = (multi[i] - single[i]) / single[i] * 100.0;
    if (!higher_is_better) g = -g;
    gains.push_back(g);
  }
  if (!single.empty()) {
    rep.mean_single = std::accumulate(single.begin(), single.end(), 0.0) / static_cast<double>(single.size());
    rep.mean_multi = std::accumulate(multi.begin(), multi.end(), 0.0) / static_cast<double>(multi.size());
  }
  if (gains.empty()) return rep;
  const double n = static_cast<double>(gains.size());
  const double mean = std::accumulate(gains.begin(), gains.end(), 0.0) / n;
  double se = 0.0;
  if (gains.size() > 1) {
    double ss = 0.0;
    for (double g : gains) ss += (g - mean) * (g - mean);
    se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  rep.relative_gain_pct = mean;
  rep.ci_low_pct = mean - 1.96 * se;
  rep.ci_high_pct = mean + 1.96 * se;
  return rep;
}

std::vector<ComparisonReport> compare_records(const std::vector<MetricsRecord>& single,
                                              const std::vector<MetricsRecord>& multi) {
  if (single.size() != multi.size()) throw DataError("evaluations cover different numbers of subjects");
  for (std::size_t i = 0; i < single.size(); ++i) {
    if (single[i].subject_id != multi[i].subject_id) {
      throw DataError("subject mismatch at row " + std::to_string(i) + ": " + single[i].subject_id + " vs " +
                      multi[i].subject_id);
    }
  }
  std::vector<ComparisonReport> out;
  for (const auto& name : metric_names()) {
    std::vector<double> s, m;
    for (std::size_t i = 0; i < single.size(); ++i) {
      const double a = metric_value(single[i], name), b = metric_value(multi[i], name);
      if (!std::isfinite(a) || !std::isfinite(b)) continue;
      s.push_back(a);
      m.push_back(b);
    }
    ComparisonReport rep = relative_gain(s, m, metric_higher_is_better(name));
    rep.metric = name;
    try {
      const auto t = paired_t_test(m, s);
      rep.t_stat = t.t;
      rep.p_value = t.p;
    } catch (const NumericalError&) {
      rep.test_degenerate = true;
      rep.p_value = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(rep);
  }
  return out;
}

void write_metrics_table(std::ostream& os, const std::vector<MetricsRecord>& records) {
  os << "subject";
  for (const auto& n : metric_names()) os << '\t' << n;
  os << '\n' << std::setprecision(10);
  std::vector<double> sums(metric_names().size(), 0.0);
  for (const auto& r : records) {
    os << r.subject_id;
    for (std::size_t k = 0; k < metric_names().size(); ++k) {
      const double v = metric_value(r, metric_names()[k]);
      sums[k] += v;
      os << '\t' << v;
    }
    os << '\n';
  }
  os << "average";
  for (double s : sums) os << '\t' << (records.empty() ? 0.0 : s / static_cast<double>(records.size()));
  os << '\n';
}

std::vector<MetricsRecord> read_metrics_table(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("metrics table is empty");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, '\t')) header.push_back(col);
  }
  if (header.empty() || header.front() != "subject") throw FormatError("metrics table header must start with 'subject'");
  std::vector<MetricsRecord> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    if (cells.size() != header.size()) throw FormatError("metrics table row " + std::to_string(row) + " has wrong width");
    if (cells[0] == "average") continue;
    MetricsRecord r;
    r.subject_id = cells[0];
    for (std::size_t k = 1; k < header.size(); ++k) {
      try {
        set_metric_value(r, header[k], std::stod(cells[k]));
      } catch (const std::logic_error&) {
        throw FormatError("metrics table row " + std::to_string(row) + ": bad value '" + cells[k] + "'");
      }
    }
    out.push_back(r);
  }
  return out;
}

void write_comparison_table(std::ostream& os, const std::vector<ComparisonReport>& reports) {
  os << "metric\tmean_single\tmean_multi\tgain_mean_pct\tci_lower_pct\tci_upper_pct\tt\tp_value\texcluded\n";
  os << std::setprecision(10);
  for (const auto& r : reports) {
    os << r.metric << '\t' << r.mean_single << '\t' << r.mean_multi << '\t' << r.relative_gain_pct << '\t'
       << r.ci_low_pct << '\t' << r.ci_high_pct << '\t' << r.t_stat << '\t';
    if (r.test_degenerate) {
      os << "degenerate";
    } else {
      os << r.p_value;
    }
    os << '\t' << r.excluded << '\n';
  }
}

}  // namespace mtsct
