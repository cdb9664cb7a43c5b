#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mtsct/volume.hpp"

namespace mtsct {

/// Regular tiling of a volume by fixed-size patches. Origins are patch corners.
struct PatchGrid {
  Dims3 dims;
  Dims3 patch;
  Dims3 stride;
  std::vector<Coord3> origins;  ///< unique, lexicographically sorted (x, y, z)

  std::size_t n_patch() const { return origins.size(); }
};

/// Per-axis origins {0, S, ..., kS} plus the boundary-snapped origin dim - P when (dim - P) % S != 0.
std::vector<int> axis_origins(int dim, int patch, int stride);

/// Boundary-snapped tiling. Throws ConfigError when the patch exceeds the volume or stride < 1.
PatchGrid build_patch_grid(Dims3 dims, Dims3 patch, Dims3 stride);

/// Patch counts without the snapped origin: prod(floor((dim - P) / S) + 1).
std::size_t floor_only_patch_count(Dims3 dims, Dims3 patch, Dims3 stride);

enum class PatchPurpose { Segmentation, Regression };

struct SamplingPolicy {
  PatchPurpose purpose = PatchPurpose::Regression;
  double skull_center_fraction = 1.0;
  int patches_per_subject = 100;

  static SamplingPolicy regression() { return {PatchPurpose::Regression, 1.0, 100}; }
  static SamplingPolicy segmentation() { return {PatchPurpose::Segmentation, 0.8, 100}; }
};

struct SampledOrigin {
  Coord3 center;  ///< drawn center before clamping
  Coord3 origin;  ///< patch corner after clamping into the volume
  bool skull_seeded = false;
};

/// round(f * n) centers on skull voxels first, the rest on non-skull voxels of the valid-center region.
std::vector<SampledOrigin> sample_patch_centers(const BinaryMask3D& label, Dims3 patch, const SamplingPolicy& policy,
                                                int n, std::uint64_t seed);

/// Dense patch values, x fastest.
struct PatchArray {
  Dims3 size;
  std::vector<double> values;

  double at(int x, int y, int z) const { return values[linear_index(size, x, y, z)]; }
};

struct PatchSample {
  Coord3 origin;
  Dims3 size;
  std::vector<PatchArray> channels;
  PatchPurpose purpose = PatchPurpose::Regression;
};

/// Copies origin..origin+size. Out-of-bounds requests throw; there is no padding.
PatchArray extract_patch(const Volume3D& v, Coord3 origin, Dims3 size);
PatchArray extract_patch(const BinaryMask3D& m, Coord3 origin, Dims3 size);
PatchSample extract_patch(std::span<const Volume3D* const> channels, Coord3 origin, Dims3 size,
                          PatchPurpose purpose = PatchPurpose::Regression);

struct PlacedPatch {
  Coord3 origin;
  PatchArray values;
};

/// Voxel-wise mean over all covering patches. Throws CoverageError naming the first uncovered voxel.
Volume3D reconstruct(std::span<const PlacedPatch> patches, Dims3 dims, IntensityKind kind = IntensityKind::Arbitrary);

}  // namespace mtsct
