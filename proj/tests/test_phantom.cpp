#include <gtest/gtest.h>

#include <deque>
#include <set>

#include "mtsct/metrics.hpp"
#include "mtsct/phantom.hpp"
#include "test_util.hpp"

using namespace mtsct;
using namespace mtsct::testing;

namespace {

PhantomSpec small_spec(int n = 32) {
  PhantomSpec s;
  s.dims = {n, n, n};
  return s;
}

// 6-connected flood fill over non-bone voxels from the corner.
BinaryMask3D exterior_reach(const BinaryMask3D& bone) {
  const Dims3 d = bone.dims();
  BinaryMask3D seen(d);
  std::deque<Coord3> q{{0, 0, 0}};
  seen.set(0, 0, 0, true);
  const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!q.empty()) {
    const Coord3 c = q.front();
    q.pop_front();
    for (const auto& o : off) {
      const Coord3 n{c.x + o[0], c.y + o[1], c.z + o[2]};
      if (n.x < 0 || n.y < 0 || n.z < 0 || n.x >= d.x || n.y >= d.y || n.z >= d.z) continue;
      if (bone.at(n.x, n.y, n.z) || seen.at(n.x, n.y, n.z)) continue;
      seen.set(n.x, n.y, n.z, true);
      q.push_back(n);
    }
  }
  return seen;
}

}  // namespace

TEST(Phantom, NoiselessLabelMatchesAnalyticShell) {
  PhantomSpec s = small_spec(40);
  s.noise_sigma = 0.0;
  s.bias_field_amp = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const PairedCase c = generate_phantom(s, seed);
    const PhantomGeometry g = draw_geometry(s, seed);
    for (int z = 0; z < s.dims.z; ++z)
      for (int y = 0; y < s.dims.y; ++y)
        for (int x = 0; x < s.dims.x; ++x) ASSERT_EQ(c.skull_label.at(x, y, z), tissue_class(g, x, y, z) == 1);
  }
}

TEST(Phantom, LabelEqualsThresholdedCt) {
  const PairedCase c = generate_phantom(small_spec(), 17);
  EXPECT_EQ(c.skull_label, threshold_mask(c.ct, 250.0));
  EXPECT_EQ(c.mri_a.dims(), c.ct.dims());
  EXPECT_EQ(c.mri_b.dims(), c.ct.dims());
  EXPECT_EQ(c.ct.kind(), IntensityKind::HU);
}

TEST(Phantom, Deterministic) {
  EXPECT_EQ(generate_phantom(small_spec(), 5), generate_phantom(small_spec(), 5));
  EXPECT_FALSE(generate_phantom(small_spec(), 5) == generate_phantom(small_spec(), 6));
}

TEST(Phantom, BoneFractionAtDefaultScale) {
  const PhantomSpec s;  // 64^3
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const PairedCase c = generate_phantom(s, seed);
    const double f = static_cast<double>(c.skull_label.count()) / static_cast<double>(c.ct.size());
    EXPECT_GT(f, 0.02);
    EXPECT_LT(f, 0.20);
  }
}

TEST(Phantom, ShellIsClosed) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const PhantomSpec s = small_spec(48);
    const PairedCase c = generate_phantom(s, seed);
    const PhantomGeometry g = draw_geometry(s, seed);
    const BinaryMask3D reach = exterior_reach(c.skull_label);
    for (int z = 0; z < s.dims.z; ++z)
      for (int y = 0; y < s.dims.y; ++y)
        for (int x = 0; x < s.dims.x; ++x) {
          if (tissue_class(g, x, y, z) >= 2) {
            ASSERT_FALSE(reach.at(x, y, z)) << "interior reached at " << x << "," << y << "," << z;
          }
        }
  }
}

TEST(Phantom, ClassesCarryConfiguredHu) {
  PhantomSpec s = small_spec();
  const PairedCase c = generate_phantom(s, 3);
  const PhantomGeometry g = draw_geometry(s, 3);
  for (int z = 0; z < s.dims.z; ++z)
    for (int y = 0; y < s.dims.y; ++y)
      for (int x = 0; x < s.dims.x; ++x) {
        const int k = tissue_class(g, x, y, z);
        const float hu = c.ct.at(x, y, z);
        if (k == 0) {
          ASSERT_EQ(hu, static_cast<float>(s.air_hu));
        } else if (k == 2) {
          ASSERT_EQ(hu, static_cast<float>(s.tissue_hu));
        } else if (k == 1) {
          ASSERT_GT(hu, 250.0f);
        }
      }
}

TEST(Phantom, SpecValidation) {
  PhantomSpec s = small_spec();
  s.outer_radius_frac = 0.99;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.bone_hu = 200.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.tissue_hu = 300.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.noise_sigma = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_NO_THROW(small_spec().validate());
}

TEST(SplitSizes, WorkedExamples) {
  auto check = [](std::size_t n, std::size_t tr, std::size_t va, std::size_t te) {
    const SplitSizes s = split_sizes(n);
    EXPECT_EQ(s.train, tr) << n;
    EXPECT_EQ(s.val, va) << n;
    EXPECT_EQ(s.test, te) << n;
  };
  check(37, 30, 4, 3);
  check(10, 8, 1, 1);
  check(12, 9, 2, 1);
}

TEST(SplitSizes, RatioWithinRounding) {
  for (std::size_t n = 10; n < 200; ++n) {
    const SplitSizes s = split_sizes(n);
    EXPECT_EQ(s.train + s.val + s.test, n);
    EXPECT_GE(s.val, 1u);
    EXPECT_GE(s.test, 1u);
    EXPECT_LE(std::abs(static_cast<double>(s.train) - 0.8 * n), 2.0);
    EXPECT_LE(std::abs(static_cast<double>(s.val) - 0.1 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(s.test) - 0.1 * n), 1.0);
  }
}

TEST(Cohort, SplitsAreDisjointAndSized) {
  const CohortSplit c = generate_cohort(small_spec(32), 12, 7);
  EXPECT_EQ(c.train.size(), 9u);
  EXPECT_EQ(c.val.size(), 2u);
  EXPECT_EQ(c.test.size(), 1u);
  std::set<std::string> ids;
  for (const auto* part : {&c.train, &c.val, &c.test})
    for (const auto& pc : *part) EXPECT_TRUE(ids.insert(pc.subject_id).second);
  EXPECT_EQ(ids.size(), 12u);
}

TEST(Cohort, DeterministicAssignment) {
  const CohortSplit a = generate_cohort(small_spec(32), 10, 3);
  const CohortSplit b = generate_cohort(small_spec(32), 10, 3);
  EXPECT_EQ(a, b);
}

TEST(Cohort, TooSmallIsError) { EXPECT_THROW(generate_cohort(small_spec(32), 9, 1), ConfigError); }

TEST(Cohort, SaveLoadRoundTrip) {
  TempDir dir("cohort");
  const CohortSplit a = generate_cohort(small_spec(32), 10, 4);
  save_cohort(a, dir.path());
  EXPECT_EQ(load_cohort(dir.path()), a);
}

TEST(Cohort, MissingManifestNamesPath) {
  TempDir dir("nocohort");
  try {
    load_cohort(dir.path() / "absent");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("absent"), std::string::npos);
  }
}

TEST(DomainShift, ChangesMriKeepsCt) {
  const PairedCase src = generate_phantom(small_spec(), 8);
  const PairedCase sh = domain_shift(src, 99);
  EXPECT_EQ(sh.domain_tag, DomainTag::Shifted);
  EXPECT_EQ(sh.ct, src.ct);
  EXPECT_EQ(sh.skull_label, src.skull_label);
  double mad = 0.0;
  for (std::size_t i = 0; i < src.mri_a.size(); ++i) mad += std::abs(sh.mri_a[i] - src.mri_a[i]);
  EXPECT_GT(mad / static_cast<double>(src.mri_a.size()), 0.0);
}

TEST(DomainShift, DegradesMoreThanNoiseRedraw) {
  const PhantomSpec s = small_spec();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const PairedCase src = generate_phantom(s, seed);
    const PairedCase redraw = generate_phantom(s, seed, derive_seed(seed, {777}));
    const PairedCase sh = domain_shift(src, seed + 100);
    const auto a = to_doubles(src.mri_a);
    double lo = a[0], hi = a[0];
    for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
    const double p_shift = psnr(to_doubles(sh.mri_a), a, hi - lo);
    const double p_redraw = psnr(to_doubles(redraw.mri_a), a, hi - lo);
    EXPECT_LT(p_shift, p_redraw);
  }
}

TEST(DomainShift, RequiresSourceCase) {
  const PairedCase sh = domain_shift(generate_phantom(small_spec(), 8), 1);
  EXPECT_THROW(domain_shift(sh, 2), DataError);
}
