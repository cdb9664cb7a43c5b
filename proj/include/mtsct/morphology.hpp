#pragma once

#include <span>
#include <vector>

#include "mtsct/patching.hpp"
#include "mtsct/volume.hpp"

namespace mtsct {

enum class Connectivity { Face6, Edge18, Vertex26 };

struct StructuringElement {
  Connectivity connectivity = Connectivity::Face6;

  /// Neighbor offsets excluding the origin.
  std::vector<Coord3> offsets() const;
};

/// Iterated dilation. Structure voxels falling outside the grid are discarded; iterations = 0 is the identity.
BinaryMask3D binary_dilate(const BinaryMask3D& mask, StructuringElement element, int iterations);

enum class RegionSource { PredictedSeg, GroundTruthSeg };

struct AttentionRegion {
  BinaryMask3D voxels;
  RegionSource source = RegionSource::PredictedSeg;
  int dilation_iters = 2;

  std::size_t size() const { return voxels.count(); }
};

/// Binarizes (value > threshold) then dilates with the face-6 element.
AttentionRegion attention_region(const PatchArray& seg_prob, double binarize_threshold = 0.5, int iterations = 2,
                                 RegionSource source = RegionSource::PredictedSeg);

/// Voxel-wise mean of the masks, binarized with > 0.5, dilated once (face-6).
BinaryMask3D group_mean_template(std::span<const BinaryMask3D> ct_skull_masks);

struct PostprocessedSct {
  Volume3D sct;             ///< voxels outside the template forced to the air floor, inside untouched
  BinaryMask3D skull_mask;  ///< template voxels whose value exceeds hu_threshold
};

/// Threshold + template masking for the single-task baseline.
PostprocessedSct postprocess_single_task(const Volume3D& sct, const BinaryMask3D& template_mask,
                                         double hu_threshold = kSkullThresholdHu);

}  // namespace mtsct
