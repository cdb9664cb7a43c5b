#pragma once

#include <deque>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mtsct/common.hpp"

namespace mtsct::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Channels x voxels; column v is voxel v of the grid in x-fastest order.
struct FeatureMap {
  Dims3 dims;
  Matrix data;

  int channels() const { return static_cast<int>(data.rows()); }
};

struct Param {
  std::string name;
  Matrix value;
  std::size_t id = 0;
};

/// Owns every learnable tensor of a model. Addresses are stable, so layers keep plain pointers.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;

  Param* add(std::string name, Matrix init);
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  std::vector<Matrix> values() const;
  void assign(const std::vector<Matrix>& values);

 private:
  std::deque<Param> params_;
};

/// Gradient accumulator aligned with a ParamSet.
class GradBuffer {
 public:
  explicit GradBuffer(const ParamSet& params);

  Matrix& operator[](const Param& p) { return grads_[p.id]; }
  const Matrix& operator[](const Param& p) const { return grads_[p.id]; }
  Matrix& at(std::size_t id) { return grads_[id]; }
  const Matrix& at(std::size_t id) const { return grads_[id]; }
  std::size_t size() const { return grads_.size(); }

  void zero();
  void add(const GradBuffer& other);
  void scale(double s);

 private:
  std::vector<Matrix> grads_;
};

}  // namespace mtsct::nn
