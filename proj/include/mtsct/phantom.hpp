#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtsct/volume.hpp"

namespace mtsct {

struct PhantomSpec {
  Dims3 dims{64, 64, 64};
  double outer_radius_frac = 0.78;  ///< outer shell semi-axis relative to the half-extent of each axis
  int shell_thickness_vox = 3;
  double bone_hu = 1000.0;
  double tissue_hu = 40.0;
  double air_hu = -1000.0;
  double noise_sigma = 0.02;
  double bias_field_amp = 0.1;
  double irregularity_amp = 0.04;

  /// Throws ConfigError when the shell does not fit or thresholding could not recover it.
  void validate() const;
};

enum class DomainTag { Source, Shifted };
std::string to_string(DomainTag tag);
DomainTag parse_domain_tag(const std::string& s);

struct PairedCase {
  Volume3D mri_a;  ///< T1-like contrast
  Volume3D mri_b;  ///< FLAIR-like contrast
  Volume3D ct;     ///< HU
  BinaryMask3D skull_label;
  std::string subject_id;
  DomainTag domain_tag = DomainTag::Source;

  friend bool operator==(const PairedCase&, const PairedCase&) = default;
};

/// One low-frequency boundary perturbation mode: amplitude * sin(kx*u + ky*v + kz*w + phase) on the unit sphere.
struct PerturbationMode {
  std::array<double, 3> k{};
  double phase = 0.0;
  double amplitude = 0.0;
};

/// Random geometry drawn for one phantom: everything needed to evaluate shell membership analytically.
struct PhantomGeometry {
  std::array<double, 3> center{};
  std::array<double, 3> outer_semi_axes{};  ///< voxels
  double thickness = 0.0;                   ///< voxels, measured along each semi-axis
  std::array<double, 9> rotation{};         ///< row-major, maps volume offsets into the shell frame
  std::vector<PerturbationMode> modes;
  std::array<double, 3> fluid_semi_axes{};  ///< interior fluid ellipsoid, same center and frame
  std::array<double, 4> density_coeffs{};   ///< smooth bone-density modulation
};

PhantomGeometry draw_geometry(const PhantomSpec& spec, std::uint64_t seed);

/// Radial scale of the shell along the unit direction (u, v, w) in the shell frame.
double boundary_scale(const PhantomGeometry& g, double u, double v, double w);

/// Analytic membership used to render the CT: 0 exterior, 1 bone shell, 2 interior tissue, 3 interior fluid.
int tissue_class(const PhantomGeometry& g, double x, double y, double z);

PairedCase generate_phantom(const PhantomSpec& spec, std::uint64_t seed);
/// Geometry from `seed`, MRI noise and bias from `noise_seed`.
PairedCase generate_phantom(const PhantomSpec& spec, std::uint64_t seed, std::uint64_t noise_seed);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// 8:1:1 split: test = floor(n/10), val = ceil(n/10), train takes the rest.
SplitSizes split_sizes(std::size_t n);

struct CohortSplit {
  std::vector<PairedCase> train;
  std::vector<PairedCase> val;
  std::vector<PairedCase> test;

  friend bool operator==(const CohortSplit&, const CohortSplit&) = default;
};

/// n jittered phantoms split 8:1:1 by a seeded shuffle of subject order.
CohortSplit generate_cohort(const PhantomSpec& spec, std::size_t n, std::uint64_t seed);

/// 7T-like variant: stronger bias, ringing inside the shell, more noise, altered contrast. CT untouched.
PairedCase domain_shift(const PairedCase& c, std::uint64_t seed);
CohortSplit domain_shift(const CohortSplit& cohort, std::uint64_t seed);

// Cohort directory: <dir>/manifest.tsv plus <dir>/cases/<subject>_{mri_a,mri_b,ct,skull}.cvf
void save_cohort(const CohortSplit& cohort, const std::filesystem::path& dir);
CohortSplit load_cohort(const std::filesystem::path& dir);

}  // namespace mtsct
