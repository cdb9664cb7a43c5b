#pragma once

#include <string>

#include "mtsct/nn/tensor.hpp"
#include "mtsct/random.hpp"

namespace mtsct::nn {

double sigmoid(double x);
double softplus(double x);

Matrix silu(const Matrix& x);
/// dL/dx given the pre-activation x and dL/dy.
Matrix silu_backward(const Matrix& x, const Matrix& dy);

/// Token-wise affine map y = W x + b on columns.
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double init_scale = 1.0);

  Matrix forward(const Matrix& x) const;
  /// Accumulates weight/bias gradients; x is the forward input.
  Matrix backward(const Matrix& x, const Matrix& dy, GradBuffer& g) const;

  Param* weight() const { return w_; }
  Param* bias() const { return b_; }

 private:
  Param* w_ = nullptr;
  Param* b_ = nullptr;
};

/// Per-column normalization over channels with learned gain and shift.
class LayerNorm {
 public:
  struct Cache {
    Matrix xhat;
    Vector inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& name, int channels);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy, GradBuffer& g) const;

 private:
  Param* gamma_ = nullptr;
  Param* beta_ = nullptr;
  static constexpr double kEps = 1e-5;
};

/// 3x3x3 convolution with zero padding ("same" output dims). Evaluated as 27 shifted GEMMs over a
/// zero-padded channel-planar copy of the input; weight column k * in + c matches im2col3's row order.
class Conv3d {
 public:
  struct Cache {
    Matrix padded;  ///< padded voxels x in
  };

  Conv3d() = default;
  Conv3d(ParamSet& ps, const std::string& name, int in, int out, Rng& rng);

  FeatureMap forward(const FeatureMap& x, Cache* cache) const;
  FeatureMap backward(const Cache& cache, Dims3 dims, const Matrix& dy, GradBuffer& g) const;

  int in_channels() const { return in_; }
  Param* weight() const { return w_; }
  Param* bias() const { return b_; }

 private:
  Param* w_ = nullptr;
  Param* b_ = nullptr;
  int in_ = 0;
};

/// Reference lowering: row k * C + c of column v holds channel c of the k-th neighbour of voxel v
/// (k runs dz, dy, dx over -1..1, x fastest), zero outside the grid.
Matrix im2col3(const FeatureMap& x);
Matrix col2im3(const Matrix& col, Dims3 dims, int channels);

/// 2x2x2 mean pooling; every dim must be even.
FeatureMap avg_pool2(const FeatureMap& x);
FeatureMap avg_pool2_backward(const FeatureMap& dy, Dims3 in_dims);

/// Nearest-neighbour x2 upsampling.
FeatureMap upsample2(const FeatureMap& x);
FeatureMap upsample2_backward(const FeatureMap& dy, Dims3 low_dims);

}  // namespace mtsct::nn
