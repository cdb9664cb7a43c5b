#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtsct {

/// Grid extent along x (H), y (W), z (D). x is the fastest-varying axis in memory.
struct Dims3 {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  bool positive() const { return x > 0 && y > 0 && z > 0; }
  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// Voxel coordinate (or patch corner) on a grid.
struct Coord3 {
  int x = 0;
  int y = 0;
  int z = 0;

  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Coord3&, const Coord3&) = default;
  friend auto operator<=>(const Coord3& a, const Coord3& b) {
    if (auto c = a.x <=> b.x; c != 0) return c;
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.z <=> b.z;
  }
};

inline std::size_t linear_index(const Dims3& d, int x, int y, int z) {
  return static_cast<std::size_t>(x) +
         static_cast<std::size_t>(d.x) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(d.y) * static_cast<std::size_t>(z));
}

std::string to_string(const Dims3& d);
std::string to_string(const Coord3& c);

// Error taxonomy. The CLI maps each family onto its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or violated preconditions on user-supplied parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data that breaks an invariant (non-finite values, mismatched dims, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file contents.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Reconstruction left a voxel without any covering patch.
class CoverageError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values during optimization or recurrence evaluation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtsct
