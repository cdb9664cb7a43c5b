#pragma once

#include <string>
#include <vector>

#include "mtsct/nn/layers.hpp"
#include "mtsct/nn/ssm.hpp"

namespace mtsct::nn {

/// Residual selective-scan block:
///   z = LayerNorm(f); y = mean_d refold(SSM(unfold(z, d)));
///   gate = W2 SiLU(W1 z + b1) + b2; out = f + droppath(y * gate).
class Vss3dBlock {
 public:
  struct Cache {
    Dims3 dims;
    LayerNorm::Cache norm;
    Matrix z;
    std::vector<SelectiveSSM::Cache> scans;
    Matrix y;
    Matrix gate_pre;
    Matrix gate;
    double path_scale = 1.0;  ///< 0 when the update path was dropped
  };

  Vss3dBlock() = default;
  Vss3dBlock(ParamSet& ps, const std::string& name, int channels, int state_dim, int directions, double droppath_rate,
             Rng& rng);

  /// `drop_rng` enables training-mode stochastic depth; nullptr is evaluation mode.
  FeatureMap forward(const FeatureMap& x, Cache* cache, Rng* drop_rng = nullptr) const;
  FeatureMap backward(const Cache& cache, const FeatureMap& dy, GradBuffer& g) const;

  /// Forward with an explicit drop decision (tests and deterministic replays).
  FeatureMap forward_with_drop(const FeatureMap& x, Cache* cache, bool dropped, bool training) const;

  const SelectiveSSM& ssm() const { return ssm_; }
  const Linear& gate_in() const { return gate1_; }
  const Linear& gate_out() const { return gate2_; }
  int directions() const { return directions_; }

 private:
  LayerNorm norm_;
  SelectiveSSM ssm_;
  Linear gate1_;
  Linear gate2_;
  int directions_ = 6;
  double droppath_rate_ = 0.0;
};

}  // namespace mtsct::nn
