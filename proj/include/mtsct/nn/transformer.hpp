#pragma once

#include <string>
#include <vector>

#include "mtsct/nn/layers.hpp"

namespace mtsct::nn {

/// Self-attention bottleneck over the flattened voxels of a feature grid. Each layer:
///   x += Wo MHA(LN1(x) + pos);  x += W2 SiLU(W1 LN2(x) + b1) + b2.
/// The positional table is learned and only enters the attention input, so zeroed output
/// projections reduce the block to the identity.
class TransformerBottleneck {
 public:
  struct LayerCache {
    LayerNorm::Cache ln1;
    Matrix attn_in;
    Matrix q, k, v;
    std::vector<Matrix> probs;  ///< per head, T x T (rows = queries)
    Matrix heads_out;           ///< C x T concatenated head outputs
    Matrix x_mid;
    LayerNorm::Cache ln2;
    Matrix ff_in;
    Matrix ff_pre;
  };
  struct Cache {
    Dims3 dims;
    std::vector<LayerCache> layers;
  };

  TransformerBottleneck() = default;
  TransformerBottleneck(ParamSet& ps, const std::string& name, int channels, Dims3 grid, int layers, int heads,
                        Rng& rng);

  FeatureMap forward(const FeatureMap& x, Cache* cache) const;
  FeatureMap backward(const Cache& cache, const FeatureMap& dy, GradBuffer& g) const;

  struct Layer {
    LayerNorm ln1;
    Linear q, k, v, o;
    LayerNorm ln2;
    Linear ff1, ff2;
  };
  const std::vector<Layer>& layers() const { return layers_; }
  Param* positional() const { return pos_; }

 private:
  Param* pos_ = nullptr;
  std::vector<Layer> layers_;
  int heads_ = 1;
  Dims3 grid_;
};

}  // namespace mtsct::nn
