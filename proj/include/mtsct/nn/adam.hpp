#pragma once

#include <vector>

#include "mtsct/nn/tensor.hpp"

namespace mtsct::nn {

/// Adam with bias correction.
class Adam {
 public:
  Adam(const ParamSet& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ParamSet& params, const GradBuffer& grads);
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace mtsct::nn
