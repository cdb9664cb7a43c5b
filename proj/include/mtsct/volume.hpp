#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mtsct/common.hpp"

namespace mtsct {

enum class IntensityKind { HU, Normalized, Arbitrary };

std::string to_string(IntensityKind kind);
IntensityKind parse_intensity_kind(const std::string& s);

// HU window used when clamping phantom CT and denormalized predictions.
inline constexpr float kHuFloor = -1024.0f;
inline constexpr float kHuCeiling = 3000.0f;
inline constexpr double kSkullThresholdHu = 250.0;

using VoxelSize = std::array<double, 3>;

/// Scalar 3D grid, x fastest then y then z.
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(Dims3 dims, VoxelSize voxel_mm, IntensityKind kind, std::vector<float> data);
  /// Constant-filled volume with unit voxels.
  Volume3D(Dims3 dims, IntensityKind kind, float fill = 0.0f);

  const Dims3& dims() const { return dims_; }
  const VoxelSize& voxel_mm() const { return voxel_mm_; }
  IntensityKind kind() const { return kind_; }
  std::span<const float> data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  float at(int x, int y, int z) const { return data_[linear_index(dims_, x, y, z)]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Same geometry, new payload and kind. Validates the kind invariant.
  Volume3D with_data(std::vector<float> data, IntensityKind kind) const;

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims3 dims_{};
  VoxelSize voxel_mm_{1.0, 1.0, 1.0};
  IntensityKind kind_ = IntensityKind::Arbitrary;
  std::vector<float> data_;
};

class BinaryMask3D {
 public:
  BinaryMask3D() = default;
  explicit BinaryMask3D(Dims3 dims, bool fill = false);
  BinaryMask3D(Dims3 dims, std::vector<std::uint8_t> data);

  const Dims3& dims() const { return dims_; }
  std::span<const std::uint8_t> data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  bool at(int x, int y, int z) const { return data_[linear_index(dims_, x, y, z)] != 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }
  void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }
  void set(int x, int y, int z, bool v) { set(linear_index(dims_, x, y, z), v); }

  std::size_t count() const;

  friend bool operator==(const BinaryMask3D&, const BinaryMask3D&) = default;

 private:
  Dims3 dims_{};
  std::vector<std::uint8_t> data_;
};

struct NormalizationRecord {
  double vmin = 0.0;
  double vmax = 1.0;
  /// Kind of the volume the record was taken from; denormalize restores it.
  IntensityKind source_kind = IntensityKind::Arbitrary;
};

struct NormalizedVolume {
  Volume3D volume;
  NormalizationRecord record;
};

/// Per-volume min-max scaling to [0, 1]. A constant volume maps to zeros with vmax = vmin + 1.
NormalizedVolume minmax_normalize(const Volume3D& v);

/// Scales with a fixed record instead of the volume's own range; values are clipped to [0, 1].
Volume3D normalize_with(const Volume3D& v, const NormalizationRecord& rec);

/// Inverse of the min-max map. HU results are clamped to [kHuFloor, kHuCeiling].
Volume3D denormalize(const Volume3D& v, const NormalizationRecord& rec);

/// Fixed CT record spanning the HU clamp window, usable without ground truth at inference.
NormalizationRecord ct_window_record();

/// Voxel is set iff value > t (strict).
BinaryMask3D threshold_mask(const Volume3D& v, double t);

// CVF v1: text header with key:value lines plus a raw little-endian float32 payload.
void save_volume(const Volume3D& v, const std::filesystem::path& header_path);
Volume3D load_volume(const std::filesystem::path& header_path);

void save_mask(const BinaryMask3D& m, const std::filesystem::path& header_path);
BinaryMask3D load_mask(const std::filesystem::path& header_path);

}  // namespace mtsct
