#include "mtsct/patching.hpp"

#include <algorithm>
#include <cmath>

#include "mtsct/random.hpp"

namespace mtsct {

namespace {

void check_geometry(Dims3 dims, Dims3 patch) {
  for (int a = 0; a < 3; ++a) {
    if (patch[a] < 1) throw ConfigError("patch size must be positive");
    if (patch[a] > dims[a]) {
      throw ConfigError("patch " + to_string(patch) + " larger than volume " + to_string(dims));
    }
  }
}

void check_bounds(Dims3 dims, Coord3 origin, Dims3 size) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || size[a] < 1 || origin[a] + size[a] > dims[a]) {
      throw DataError("patch at " + to_string(origin) + " of size " + to_string(size) + " leaves volume " +
                      to_string(dims));
    }
  }
}

}  // namespace

std::vector<int> axis_origins(int dim, int patch, int stride) {
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (patch > dim || patch < 1) throw ConfigError("patch larger than volume");
  std::vector<int> out;
  const int span = dim - patch;
  for (int o = 0; o <= span; o += stride) out.push_back(o);
  if (span % stride != 0) out.push_back(span);
  return out;
}

PatchGrid build_patch_grid(Dims3 dims, Dims3 patch, Dims3 stride) {
  check_geometry(dims, patch);
  PatchGrid g{dims, patch, stride, {}};
  const auto ox = axis_origins(dims.x, patch.x, stride.x);
  const auto oy = axis_origins(dims.y, patch.y, stride.y);
  const auto oz = axis_origins(dims.z, patch.z, stride.z);
  g.origins.reserve(ox.size() * oy.size() * oz.size());
  for (int x : ox)
    for (int y : oy)
      for (int z : oz) g.origins.push_back({x, y, z});
  return g;
}

std::size_t floor_only_patch_count(Dims3 dims, Dims3 patch, Dims3 stride) {
  check_geometry(dims, patch);
  std::size_t n = 1;
  for (int a = 0; a < 3; ++a) {
    if (stride[a] < 1) throw ConfigError("stride must be at least 1");
    n *= static_cast<std::size_t>((dims[a] - patch[a]) / stride[a] + 1);
  }
  return n;
}

std::vector<SampledOrigin> sample_patch_centers(const BinaryMask3D& label, Dims3 patch, const SamplingPolicy& policy,
                                                int n, std::uint64_t seed) {
  const Dims3 d = label.dims();
  check_geometry(d, patch);
  if (!(policy.skull_center_fraction >= 0.0 && policy.skull_center_fraction <= 1.0)) {
    throw ConfigError("skull_center_fraction must lie in [0, 1]");
  }
  if (n < 0) throw ConfigError("negative patch count");
  const int n_skull = static_cast<int>(std::lround(policy.skull_center_fraction * n));

  std::vector<std::size_t> skull, background;
  for (int z = 0; z < d.z; ++z) {
    for (int y = 0; y < d.y; ++y) {
      for (int x = 0; x < d.x; ++x) {
        const auto i = linear_index(d, x, y, z);
        if (label[i]) {
          skull.push_back(i);
          continue;
        }
        // valid-center region: a half-patch margin on each side
        const bool inside = x >= patch.x / 2 && x <= d.x - patch.x + patch.x / 2 && y >= patch.y / 2 &&
                            y <= d.y - patch.y + patch.y / 2 && z >= patch.z / 2 && z <= d.z - patch.z + patch.z / 2;
        if (inside) background.push_back(i);
      }
    }
  }
  if (n_skull > 0 && skull.empty()) throw DataError("cannot draw skull-centered patches from an empty label");
  if (n - n_skull > 0 && background.empty()) throw DataError("no non-skull voxels inside the valid-center region");

  Rng rng(seed);
  auto to_coord = [&](std::size_t i) {
    const int x = static_cast<int>(i % d.x);
    const int y = static_cast<int>((i / d.x) % d.y);
    const int z = static_cast<int>(i / (static_cast<std::size_t>(d.x) * d.y));
    return Coord3{x, y, z};
  };
  auto draw = [&](const std::vector<std::size_t>& pool, bool skull_seeded) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const Coord3 c = to_coord(pool[pick(rng)]);
    Coord3 o;
    for (int a = 0; a < 3; ++a) o[a] = std::clamp(c[a] - patch[a] / 2, 0, d[a] - patch[a]);
    return SampledOrigin{c, o, skull_seeded};
  };
  std::vector<SampledOrigin> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n_skull; ++k) out.push_back(draw(skull, true));
  for (int k = n_skull; k < n; ++k) out.push_back(draw(background, false));
  return out;
}

PatchArray extract_patch(const Volume3D& v, Coord3 origin, Dims3 size) {
  check_bounds(v.dims(), origin, size);
  PatchArray p{size, std::vector<double>(size.voxels())};
  auto src = v.data();
  std::size_t k = 0;
  for (int z = 0; z < size.z; ++z)
    for (int y = 0; y < size.y; ++y) {
      const std::size_t row = linear_index(v.dims(), origin.x, origin.y + y, origin.z + z);
      for (int x = 0; x < size.x; ++x) p.values[k++] = src[row + static_cast<std::size_t>(x)];
    }
  return p;
}

PatchArray extract_patch(const BinaryMask3D& m, Coord3 origin, Dims3 size) {
  check_bounds(m.dims(), origin, size);
  PatchArray p{size, std::vector<double>(size.voxels())};
  std::size_t k = 0;
  for (int z = 0; z < size.z; ++z)
    for (int y = 0; y < size.y; ++y)
      for (int x = 0; x < size.x; ++x) p.values[k++] = m.at(origin.x + x, origin.y + y, origin.z + z) ? 1.0 : 0.0;
  return p;
}

PatchSample extract_patch(std::span<const Volume3D* const> channels, Coord3 origin, Dims3 size, PatchPurpose purpose) {
  if (channels.empty()) throw ConfigError("extract_patch needs at least one channel");
  PatchSample s{origin, size, {}, purpose};
  for (const Volume3D* v : channels) {
    if (!(v->dims() == channels.front()->dims())) throw DataError("channel volumes differ in dims");
    s.channels.push_back(extract_patch(*v, origin, size));
  }
  return s;
}

Volume3D reconstruct(std::span<const PlacedPatch> patches, Dims3 dims, IntensityKind kind) {
  if (!dims.positive()) throw ConfigError("reconstruct needs positive dims");
  const std::size_t n = dims.voxels();
  std::vector<double> sum(n, 0.0);
  std::vector<std::uint32_t> count(n, 0);
  for (const auto& p : patches) {
    const Dims3 s = p.values.size;
    check_bounds(dims, p.origin, s);
    if (p.values.values.size() != s.voxels()) throw DataError("patch payload does not match its size");
    std::size_t k = 0;
    for (int z = 0; z < s.z; ++z)
      for (int y = 0; y < s.y; ++y) {
        const std::size_t row = linear_index(dims, p.origin.x, p.origin.y + y, p.origin.z + z);
        for (int x = 0; x < s.x; ++x) {
          sum[row + static_cast<std::size_t>(x)] += p.values.values[k++];
          ++count[row + static_cast<std::size_t>(x)];
        }
      }
  }
  std::vector<float> out(n);
  for (int z = 0; z < dims.z; ++z)
    for (int y = 0; y < dims.y; ++y)
      for (int x = 0; x < dims.x; ++x) {
        const auto i = linear_index(dims, x, y, z);
        if (count[i] == 0) throw CoverageError("voxel " + to_string(Coord3{x, y, z}) + " is not covered by any patch");
        out[i] = static_cast<float>(sum[i] / count[i]);
      }
  return Volume3D(dims, VoxelSize{1.0, 1.0, 1.0}, kind, std::move(out));
}

}  // namespace mtsct
