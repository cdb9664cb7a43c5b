#include "mtsct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mtsct/random.hpp"

namespace mtsct {

namespace {

constexpr double kPi = std::numbers::pi;

// Largest boundary scale any perturbation can reach, used for fit checks.
double max_extent(const PhantomSpec& s, int axis) {
  return s.outer_radius_frac * 0.5 * s.dims[axis] * (1.0 + s.irregularity_amp);
}

double fluid_hu(const PhantomSpec& s) { return s.tissue_hu - 30.0; }

double density_amplitude(double bone_hu) { return std::clamp((bone_hu - 300.0) / bone_hu, 0.0, 0.25); }

double density_field(const PhantomGeometry& g, const std::array<double, 3>& q) {
  const auto& c = g.density_coeffs;
  return 0.5 * std::sin(2.0 * kPi * c[0] * q[0] / g.outer_semi_axes[0] + c[1]) +
         0.5 * std::cos(2.0 * kPi * c[2] * q[2] / g.outer_semi_axes[2] + c[3]);
}

std::array<double, 3> to_shell_frame(const PhantomGeometry& g, double x, double y, double z) {
  const double dx = x - g.center[0], dy = y - g.center[1], dz = z - g.center[2];
  const auto& r = g.rotation;
  return {r[0] * dx + r[1] * dy + r[2] * dz, r[3] * dx + r[4] * dy + r[5] * dz, r[6] * dx + r[7] * dy + r[8] * dz};
}

std::array<double, 9> rotation_matrix(double ax, double ay, double az) {
  const double cx = std::cos(ax), sx = std::sin(ax), cy = std::cos(ay), sy = std::sin(ay), cz = std::cos(az),
               sz = std::sin(az);
  // Rz * Ry * Rx
  return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

// Smooth multiplicative field in [-1, 1] over the volume.
struct BiasField {
  std::array<double, 3> freq{};
  std::array<double, 3> phase{};

  static BiasField draw(Rng& rng) {
    BiasField b;
    for (int i = 0; i < 3; ++i) {
      b.freq[i] = uniform(rng, 0.3, 1.0);
      b.phase[i] = uniform(rng, 0.0, 2.0 * kPi);
    }
    return b;
  }

  double operator()(const Dims3& d, int x, int y, int z) const {
    const double u = kPi * freq[0] * x / d.x + phase[0];
    const double v = kPi * freq[1] * y / d.y + phase[1];
    const double w = kPi * freq[2] * z / d.z + phase[2];
    return (std::sin(u) + std::sin(v) + std::sin(w)) / 3.0;
  }
};

}  // namespace

std::string to_string(DomainTag tag) { return tag == DomainTag::Source ? "source" : "shifted"; }

DomainTag parse_domain_tag(const std::string& s) {
  if (s == "source") return DomainTag::Source;
  if (s == "shifted") return DomainTag::Shifted;
  throw FormatError("unknown domain tag '" + s + "'");
}

void PhantomSpec::validate() const {
  if (!dims.positive()) throw ConfigError("phantom dims must be positive");
  if (!(outer_radius_frac > 0.0 && outer_radius_frac < 1.0)) throw ConfigError("outer_radius_frac must lie in (0, 1)");
  if (shell_thickness_vox < 2) throw ConfigError("shell_thickness_vox must be at least 2 to keep the shell closed");
  if (!(bone_hu > kSkullThresholdHu && kSkullThresholdHu > tissue_hu)) {
    throw ConfigError("phantom requires bone_hu > 250 > tissue_hu");
  }
  if (!(air_hu < tissue_hu)) throw ConfigError("air_hu must be below tissue_hu");
  if (noise_sigma < 0.0 || bias_field_amp < 0.0 || irregularity_amp < 0.0) {
    throw ConfigError("noise, bias and irregularity amplitudes must be non-negative");
  }
  if (irregularity_amp >= 0.3) throw ConfigError("irregularity_amp must stay below 0.3");
  for (int a = 0; a < 3; ++a) {
    // one voxel for center jitter, two voxels of margin
    if (max_extent(*this, a) + 1.0 > 0.5 * dims[a] - 2.0) {
      throw ConfigError("shell does not fit inside the volume with a 2-voxel margin along axis " + std::to_string(a));
    }
    const double inner = outer_radius_frac * 0.5 * dims[a] - shell_thickness_vox;
    if (inner < 2.0) throw ConfigError("shell thickness leaves no interior along axis " + std::to_string(a));
  }
}

PhantomGeometry draw_geometry(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, {1}));
  PhantomGeometry g;
  for (int a = 0; a < 3; ++a) {
    g.center[a] = 0.5 * (spec.dims[a] - 1) + uniform(rng, -0.5, 0.5);
    g.outer_semi_axes[a] = spec.outer_radius_frac * 0.5 * spec.dims[a];
  }
  g.thickness = spec.shell_thickness_vox;
  g.rotation = rotation_matrix(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2));
  // Amplitudes sum to at most irregularity_amp so the fit check stays conservative.
  constexpr int kModes = 4;
  for (int m = 0; m < kModes; ++m) {
    PerturbationMode mode;
    for (auto& k : mode.k) k = uniform(rng, -3.0, 3.0);
    mode.phase = uniform(rng, 0.0, 2.0 * kPi);
    mode.amplitude = spec.irregularity_amp / kModes * uniform(rng, 0.5, 1.0);
    g.modes.push_back(mode);
  }
  for (int a = 0; a < 3; ++a) {
    g.fluid_semi_axes[a] = (g.outer_semi_axes[a] - g.thickness) * uniform(rng, 0.25, 0.4);
  }
  for (auto& c : g.density_coeffs) c = uniform(rng, 0.5, 1.5);
  return g;
}

double boundary_scale(const PhantomGeometry& g, double u, double v, double w) {
  double s = 1.0;
  for (const auto& m : g.modes) s += m.amplitude * std::sin(m.k[0] * u + m.k[1] * v + m.k[2] * w + m.phase);
  return s;
}

int tissue_class(const PhantomGeometry& g, double x, double y, double z) {
  const auto q = to_shell_frame(g, x, y, z);
  double out2 = 0.0, in2 = 0.0, fl2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double o = q[a] / g.outer_semi_axes[a];
    const double i = q[a] / (g.outer_semi_axes[a] - g.thickness);
    const double f = q[a] / g.fluid_semi_axes[a];
    out2 += o * o;
    in2 += i * i;
    fl2 += f * f;
  }
  const double rho_out = std::sqrt(out2);
  double s = 1.0;
  if (rho_out > 0.0) {
    s = boundary_scale(g, q[0] / g.outer_semi_axes[0] / rho_out, q[1] / g.outer_semi_axes[1] / rho_out,
                       q[2] / g.outer_semi_axes[2] / rho_out);
  }
  if (rho_out > s) return 0;
  if (std::sqrt(in2) > s) return 1;
  if (fl2 <= 1.0) return 3;
  return 2;
}

PairedCase generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  return generate_phantom(spec, seed, derive_seed(seed, {2}));
}

PairedCase generate_phantom(const PhantomSpec& spec, std::uint64_t seed, std::uint64_t noise_seed) {
  const PhantomGeometry g = draw_geometry(spec, seed);
  const Dims3 d = spec.dims;
  const std::size_t n = d.voxels();
  std::vector<float> ct(n), a(n), b(n);
  const double dens_amp = density_amplitude(spec.bone_hu);

  Rng noise_rng(noise_seed);
  const BiasField bias_a = BiasField::draw(noise_rng);
  const BiasField bias_b = BiasField::draw(noise_rng);

  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const std::size_t i = linear_index(d, x, y, z);
        const int cls = tissue_class(g, x, y, z);
        double hu = spec.air_hu, ta = 0.0, tb = 0.0;
        switch (cls) {
          case 1: {
            const double field = density_field(g, to_shell_frame(g, x, y, z));
            hu = spec.bone_hu * (1.0 + dens_amp * field);
            // marrow signal carries a faint trace of the density variation
            ta = 0.10 + 0.06 * field;
            tb = 0.06 + 0.03 * field;
            break;
          }
          case 2:
            hu = spec.tissue_hu;
            ta = 0.75;
            tb = 0.45;
            break;
          case 3:
            hu = fluid_hu(spec);
            ta = 0.30;
            tb = 0.90;
            break;
          default: break;
        }
        ct[i] = static_cast<float>(std::clamp(hu, static_cast<double>(kHuFloor), static_cast<double>(kHuCeiling)));
        // T1-like remap compresses highs, FLAIR-like remap expands them
        const double ra = std::pow(ta, 0.8);
        const double rb = tb * tb * (3.0 - 2.0 * tb);
        a[i] = static_cast<float>(ra * (1.0 + spec.bias_field_amp * bias_a(d, x, y, z)));
        b[i] = static_cast<float>(rb * (1.0 + spec.bias_field_amp * bias_b(d, x, y, z)));
      }
    }
  }
  if (spec.noise_sigma > 0.0) {
    for (std::size_t i = 0; i < n; ++i) a[i] += static_cast<float>(gaussian(noise_rng, spec.noise_sigma));
    for (std::size_t i = 0; i < n; ++i) b[i] += static_cast<float>(gaussian(noise_rng, spec.noise_sigma));
  }

  PairedCase c;
  const VoxelSize vox{1.0, 1.0, 1.0};
  c.ct = Volume3D(d, vox, IntensityKind::HU, std::move(ct));
  c.mri_a = Volume3D(d, vox, IntensityKind::Arbitrary, std::move(a));
  c.mri_b = Volume3D(d, vox, IntensityKind::Arbitrary, std::move(b));
  c.skull_label = threshold_mask(c.ct, kSkullThresholdHu);
  c.subject_id = "phantom-" + std::to_string(seed);
  c.domain_tag = DomainTag::Source;
  return c;
}

SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.test = n / 10;
  s.val = (n + 9) / 10;
  s.train = n - s.val - s.test;
  return s;
}

CohortSplit generate_cohort(const PhantomSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ConfigError("cohort needs at least 10 subjects for an 8:1:1 split, got " + std::to_string(n));
  spec.validate();
  std::vector<PairedCase> cases;
  cases.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng jitter(derive_seed(seed, {10, i}));
    PhantomSpec s = spec;
    s.outer_radius_frac = spec.outer_radius_frac * uniform(jitter, 0.88, 1.0);
    s.shell_thickness_vox = std::max(2, spec.shell_thickness_vox + static_cast<int>(std::floor(uniform(jitter, -1.0, 2.0))));
    try {
      s.validate();
    } catch (const ConfigError&) {
      s.shell_thickness_vox = spec.shell_thickness_vox;
      s.outer_radius_frac = spec.outer_radius_frac;
    }
    PairedCase c = generate_phantom(s, derive_seed(seed, {11, i}));
    char id[32];
    std::snprintf(id, sizeof(id), "sub-%03zu", i + 1);
    c.subject_id = id;
    cases.push_back(std::move(c));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(seed, {12}));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const SplitSizes sz = split_sizes(n);
  CohortSplit out;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < sz.train ? out.train : (k < sz.train + sz.val ? out.val : out.test);
    dst.push_back(std::move(cases[order[k]]));
  }
  return out;
}

namespace {

// BFS distance (6-connected steps) from the skull into the enclosed interior; -1 elsewhere.
std::vector<int> interior_depth(const BinaryMask3D& skull) {
  const Dims3 d = skull.dims();
  const std::size_t n = d.voxels();
  std::vector<std::uint8_t> exterior(n, 0);
  std::deque<Coord3> queue;
  auto push_ext = [&](int x, int y, int z) {
    const auto i = linear_index(d, x, y, z);
    if (skull[i] || exterior[i]) return;
    exterior[i] = 1;
    queue.push_back({x, y, z});
  };
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x)
        if (x == 0 || y == 0 || z == 0 || x == d.x - 1 || y == d.y - 1 || z == d.z - 1) push_ext(x, y, z);
  constexpr int kSteps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!queue.empty()) {
    const Coord3 c = queue.front();
    queue.pop_front();
    for (const auto& s : kSteps) {
      const int x = c.x + s[0], y = c.y + s[1], z = c.z + s[2];
      if (x < 0 || y < 0 || z < 0 || x >= d.x || y >= d.y || z >= d.z) continue;
      push_ext(x, y, z);
    }
  }
  std::vector<int> depth(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (skull[i]) depth[i] = 0;
  }
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x)
        if (skull.at(x, y, z)) queue.push_back({x, y, z});
  while (!queue.empty()) {
    const Coord3 c = queue.front();
    queue.pop_front();
    const int dc = depth[linear_index(d, c.x, c.y, c.z)];
    for (const auto& s : kSteps) {
      const int x = c.x + s[0], y = c.y + s[1], z = c.z + s[2];
      if (x < 0 || y < 0 || z < 0 || x >= d.x || y >= d.y || z >= d.z) continue;
      const auto i = linear_index(d, x, y, z);
      if (exterior[i] || depth[i] >= 0) continue;
      depth[i] = dc + 1;
      queue.push_back({x, y, z});
    }
  }
  return depth;
}

}  // namespace

PairedCase domain_shift(const PairedCase& c, std::uint64_t seed) {
  if (c.domain_tag != DomainTag::Source) throw DataError("domain_shift expects a source-domain case");
  const Dims3 d = c.ct.dims();
  Rng rng(derive_seed(seed, {20}));
  const BiasField bias_a = BiasField::draw(rng);
  const BiasField bias_b = BiasField::draw(rng);
  constexpr double kBias = 0.35;
  constexpr double kRinging = 0.12;
  constexpr double kExtraNoise = 0.04;
  const double ring_period = uniform(rng, 2.5, 3.5);
  const auto depth = interior_depth(c.skull_label);

  auto src_a = c.mri_a.data();
  auto src_b = c.mri_b.data();
  std::vector<float> a(src_a.size()), b(src_b.size());
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const auto i = linear_index(d, x, y, z);
        double va = src_a[i], vb = src_b[i];
        // altered contrast curves
        va = std::copysign(std::pow(std::abs(va), 1.35), va) * 0.95;
        vb = 0.7 * vb + 0.25 * vb * vb;
        va *= 1.0 + kBias * bias_a(d, x, y, z);
        vb *= 1.0 + kBias * bias_b(d, x, y, z);
        if (depth[i] >= 1) {
          const double r = kRinging * std::cos(2.0 * kPi * depth[i] / ring_period) * std::exp(-depth[i] / 4.0);
          va += r;
          vb += 0.5 * r;
        }
        a[i] = static_cast<float>(va + gaussian(rng, kExtraNoise));
        b[i] = static_cast<float>(vb + gaussian(rng, kExtraNoise));
      }
    }
  }
  PairedCase out = c;
  out.mri_a = c.mri_a.with_data(std::move(a), c.mri_a.kind());
  out.mri_b = c.mri_b.with_data(std::move(b), c.mri_b.kind());
  out.domain_tag = DomainTag::Shifted;
  return out;
}

CohortSplit domain_shift(const CohortSplit& cohort, std::uint64_t seed) {
  CohortSplit out;
  std::uint64_t k = 0;
  for (const auto* part : {&cohort.train, &cohort.val, &cohort.test}) {
    auto& dst = part == &cohort.train ? out.train : (part == &cohort.val ? out.val : out.test);
    for (const auto& c : *part) dst.push_back(domain_shift(c, derive_seed(seed, {21, k++})));
  }
  return out;
}

void save_cohort(const CohortSplit& cohort, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "cases");
  std::ofstream manifest(dir / "manifest.tsv", std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest in '" + dir.string() + "'");
  manifest << "subject_id\tsplit\tdomain_tag\tmri_a\tmri_b\tct\tskull\n";
  auto emit = [&](const std::vector<PairedCase>& cases, const char* split) {
    for (const auto& c : cases) {
      const std::string base = "cases/" + c.subject_id;
      save_volume(c.mri_a, dir / (base + "_mri_a.cvf"));
      save_volume(c.mri_b, dir / (base + "_mri_b.cvf"));
      save_volume(c.ct, dir / (base + "_ct.cvf"));
      save_mask(c.skull_label, dir / (base + "_skull.cvf"));
      manifest << c.subject_id << '\t' << split << '\t' << to_string(c.domain_tag) << '\t' << base << "_mri_a.cvf\t"
               << base << "_mri_b.cvf\t" << base << "_ct.cvf\t" << base << "_skull.cvf\n";
    }
  };
  emit(cohort.train, "train");
  emit(cohort.val, "val");
  emit(cohort.test, "test");
  if (!manifest) throw DataError("failed writing manifest in '" + dir.string() + "'");
}

CohortSplit load_cohort(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw DataError("missing cohort manifest '" + (dir / "manifest.tsv").string() + "'");
  CohortSplit out;
  std::string line;
  std::getline(manifest, line);  // header
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string id, split, tag, pa, pb, pct, pskull;
    if (!std::getline(is, id, '\t') || !std::getline(is, split, '\t') || !std::getline(is, tag, '\t') ||
        !std::getline(is, pa, '\t') || !std::getline(is, pb, '\t') || !std::getline(is, pct, '\t') ||
        !std::getline(is, pskull, '\t')) {
      throw FormatError("malformed manifest line '" + line + "'");
    }
    PairedCase c;
    c.subject_id = id;
    c.domain_tag = parse_domain_tag(tag);
    c.mri_a = load_volume(dir / pa);
    c.mri_b = load_volume(dir / pb);
    c.ct = load_volume(dir / pct);
    c.skull_label = load_mask(dir / pskull);
    if (!(c.mri_a.dims() == c.ct.dims() && c.mri_b.dims() == c.ct.dims() && c.skull_label.dims() == c.ct.dims())) {
      throw FormatError("case '" + id + "' has grids with differing dims");
    }
    if (split == "train") {
      out.train.push_back(std::move(c));
    } else if (split == "val") {
      out.val.push_back(std::move(c));
    } else if (split == "test") {
      out.test.push_back(std::move(c));
    } else {
      throw FormatError("unknown split '" + split + "' in manifest");
    }
  }
  return out;
}

}  // namespace mtsct
