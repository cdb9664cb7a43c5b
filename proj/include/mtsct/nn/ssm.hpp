#pragma once

#include <string>
#include <vector>

#include "mtsct/nn/layers.hpp"
#include "mtsct/nn/tensor.hpp"

namespace mtsct::nn {

/// Core recurrence x_{t+1} = exp(delta_t * A) x_t + b_t with x_0 = 0 and diagonal A.
/// `delta` and `b` are N x T; returns the N x T matrix of states x_1 .. x_T.
/// Throws NumericalError naming the first step whose state is non-finite.
Matrix selective_scan(const Vector& a_diag, const Matrix& delta, const Matrix& b);

/// Input-conditioned state-space layer over a token sequence (C x T):
///   B(u) = W_B u + b_B, delta(u) = softplus(W_d u + b_d), A = -softplus(a_raw),
///   x_{t+1} = exp(delta(u_t) A) x_t + B(u_t),  y_t = W_C x_{t+1} + b_C.
class SelectiveSSM {
 public:
  struct Cache {
    Matrix u;       ///< C x T input tokens
    Matrix z;       ///< N x T pre-softplus step sizes
    Matrix delta;   ///< N x T
    Matrix abar;    ///< N x T transition factors
    Matrix states;  ///< N x T, x_1 .. x_T
  };

  SelectiveSSM() = default;
  SelectiveSSM(ParamSet& ps, const std::string& name, int channels, int state_dim, Rng& rng);

  Matrix forward(const Matrix& u, Cache* cache) const;
  /// Returns dL/du and accumulates parameter gradients.
  Matrix backward(const Cache& cache, const Matrix& dy, GradBuffer& g) const;

  Vector a_diag() const;
  int state_dim() const { return state_dim_; }

  Param* w_b() const { return w_b_; }
  Param* b_b() const { return b_b_; }
  Param* w_delta() const { return w_d_; }
  Param* b_delta() const { return b_d_; }
  Param* a_raw() const { return a_raw_; }
  Param* w_c() const { return w_c_; }
  Param* b_c() const { return b_c_; }

 private:
  Param* w_b_ = nullptr;
  Param* b_b_ = nullptr;
  Param* w_d_ = nullptr;
  Param* b_d_ = nullptr;
  Param* a_raw_ = nullptr;
  Param* w_c_ = nullptr;
  Param* b_c_ = nullptr;
  int state_dim_ = 0;
};

/// Directional raster orders for SS3D: direction = 2 * axis + reversed, axis 0 = x-major (x fastest),
/// 1 = y-major (y, then z, then x), 2 = z-major (z, then x, then y).
/// Returns order[t] = voxel index of sequence position t.
std::vector<std::size_t> scan_order(Dims3 dims, int direction);

Matrix ss3d_unfold(const FeatureMap& f, int direction);
FeatureMap ss3d_refold(const Matrix& seq, Dims3 dims, int direction);

}  // namespace mtsct::nn
