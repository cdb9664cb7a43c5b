#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mtsct/patching.hpp"
#include "mtsct/random.hpp"
#include "mtsct/volume.hpp"

namespace mtsct::testing {

inline Volume3D random_volume(Dims3 d, Rng& rng, double lo = -1.0, double hi = 1.0,
                              IntensityKind kind = IntensityKind::Arbitrary) {
  std::vector<float> v(d.voxels());
  for (auto& x : v) x = static_cast<float>(uniform(rng, lo, hi));
  return Volume3D(d, {1.0, 1.0, 1.0}, kind, std::move(v));
}

inline BinaryMask3D random_mask(Dims3 d, Rng& rng, double p = 0.3) {
  BinaryMask3D m(d);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, uniform(rng, 0.0, 1.0) < p);
  return m;
}

inline PatchArray random_patch(Dims3 d, Rng& rng, double lo, double hi) {
  PatchArray p{d, std::vector<double>(d.voxels())};
  for (auto& x : p.values) x = uniform(rng, lo, hi);
  return p;
}

inline Dims3 random_dims(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mtsct_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) {
  const double s = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / s;
}

}  // namespace mtsct::testing
