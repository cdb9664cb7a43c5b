#include "mtsct/nn/adam.hpp"

#include <cmath>

namespace mtsct::nn {

Adam::Adam(const ParamSet& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
    v_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
  }
}

void Adam::step(ParamSet& params, const GradBuffer& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads.at(i);
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    params[i].value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace mtsct::nn
