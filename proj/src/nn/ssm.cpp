#include "mtsct/nn/ssm.hpp"

#include <algorithm>
#include <cmath>

namespace mtsct::nn {

Matrix selective_scan(const Vector& a_diag, const Matrix& delta, const Matrix& b) {
  const Eigen::Index n = a_diag.size();
  const Eigen::Index t_len = b.cols();
  if (delta.rows() != n || b.rows() != n || delta.cols() != t_len) throw ConfigError("selective_scan shape mismatch");
  if (t_len < 1) throw ConfigError("selective_scan needs at least one token");
  Matrix states(n, t_len);
  Vector x = Vector::Zero(n);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    x = (delta.col(t).array() * a_diag.array()).exp() * x.array() + b.col(t).array();
    if (!x.allFinite()) throw NumericalError("selective scan state became non-finite at step " + std::to_string(t));
    states.col(t) = x;
  }
  return states;
}

SelectiveSSM::SelectiveSSM(ParamSet& ps, const std::string& name, int channels, int state_dim, Rng& rng)
    : state_dim_(state_dim) {
  if (state_dim < 1) throw ConfigError("state_dim must be positive");
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(channels)));
  auto randn = [&](int r, int c, double scale) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * dist(rng);
    return m;
  };
  // A_n = -softplus(a_raw_n) spread over (0.5 .. 0.5 N], so exp(delta A) starts well inside the unit disk.
  Matrix a_raw(state_dim, 1);
  for (int i = 0; i < state_dim; ++i) {
    const double target = 0.5 * (i + 1);
    a_raw(i, 0) = std::log(std::expm1(target));
  }
  w_b_ = ps.add(name + ".w_b", randn(state_dim, channels, 1.0));
  b_b_ = ps.add(name + ".b_b", Matrix::Zero(state_dim, 1));
  w_d_ = ps.add(name + ".w_delta", randn(state_dim, channels, 0.1));
  // softplus(-1) ~ 0.31 as the starting step size
  b_d_ = ps.add(name + ".b_delta", Matrix::Constant(state_dim, 1, -1.0));
  a_raw_ = ps.add(name + ".a_raw", a_raw);
  w_c_ = ps.add(name + ".w_c", randn(channels, state_dim, std::sqrt(static_cast<double>(channels) / state_dim)));
  b_c_ = ps.add(name + ".b_c", Matrix::Zero(channels, 1));
}

Vector SelectiveSSM::a_diag() const {
  return -a_raw_->value.col(0).unaryExpr([](double v) { return softplus(v); });
}

Matrix SelectiveSSM::forward(const Matrix& u, Cache* cache) const {
  Matrix b = w_b_->value * u;
  b.colwise() += b_b_->value.col(0);
  Matrix z = w_d_->value * u;
  z.colwise() += b_d_->value.col(0);
  Matrix delta = z.unaryExpr([](double v) { return softplus(v); });
  const Vector a = a_diag();
  Matrix states = selective_scan(a, delta, b);
  Matrix y = w_c_->value * states;
  y.colwise() += b_c_->value.col(0);
  if (cache) {
    cache->u = u;
    cache->abar = (delta.array().colwise() * a.array()).exp();
    cache->z = std::move(z);
    cache->delta = std::move(delta);
    cache->states = std::move(states);
  }
  return y;
}

Matrix SelectiveSSM::backward(const Cache& c, const Matrix& dy, GradBuffer& g) const {
  const Eigen::Index n = state_dim_;
  const Eigen::Index t_len = dy.cols();
  g[*w_c_].noalias() += dy * c.states.transpose();
  g[*b_c_] += dy.rowwise().sum();
  const Matrix ds_out = w_c_->value.transpose() * dy;  // direct dL/dx_{t+1} from the readout

  Matrix db(n, t_len);
  Matrix dabar(n, t_len);
  Vector carry = Vector::Zero(n);
  for (Eigen::Index t = t_len - 1; t >= 0; --t) {
    const Vector gs = ds_out.col(t) + carry;
    db.col(t) = gs;
    if (t > 0) {
      dabar.col(t) = gs.cwiseProduct(c.states.col(t - 1));
    } else {
      dabar.col(t).setZero();
    }
    carry = gs.cwiseProduct(c.abar.col(t));
  }
  const Vector a = a_diag();
  // abar = exp(delta * a): d/ddelta = abar * a, d/da = abar * delta
  const Matrix d_pre = dabar.cwiseProduct(c.abar);
  const Matrix ddelta = d_pre.array().colwise() * a.array();
  const Vector da = (d_pre.cwiseProduct(c.delta)).rowwise().sum();
  // a = -softplus(a_raw)
  const Vector da_raw = -da.cwiseProduct(a_raw_->value.col(0).unaryExpr([](double v) { return sigmoid(v); }));
  g[*a_raw_] += da_raw;
  const Matrix dz = ddelta.cwiseProduct(c.z.unaryExpr([](double v) { return sigmoid(v); }));

  g[*w_b_].noalias() += db * c.u.transpose();
  g[*b_b_] += db.rowwise().sum();
  g[*w_d_].noalias() += dz * c.u.transpose();
  g[*b_d_] += dz.rowwise().sum();
  Matrix du = w_b_->value.transpose() * db;
  du.noalias() += w_d_->value.transpose() * dz;
  return du;
}

std::vector<std::size_t> scan_order(Dims3 d, int direction) {
  if (direction < 0 || direction >= 6) throw ConfigError("unknown scan direction " + std::to_string(direction));
  const int axis = direction / 2;
  const bool reversed = direction % 2 == 1;
  std::vector<std::size_t> order;
  order.reserve(d.voxels());
  // fastest, middle, slowest axes
  const int fast = axis, mid = (axis + 1) % 3, slow = (axis + 2) % 3;
  Coord3 c;
  for (int s = 0; s < d[slow]; ++s) {
    c[slow] = s;
    for (int m = 0; m < d[mid]; ++m) {
      c[mid] = m;
      for (int f = 0; f < d[fast]; ++f) {
        c[fast] = f;
        order.push_back(linear_index(d, c.x, c.y, c.z));
      }
    }
  }
  if (reversed) std::reverse(order.begin(), order.end());
  return order;
}

Matrix ss3d_unfold(const FeatureMap& f, int direction) {
  const auto order = scan_order(f.dims, direction);
  Matrix seq(f.channels(), static_cast<Eigen::Index>(order.size()));
  for (std::size_t t = 0; t < order.size(); ++t) {
    seq.col(static_cast<Eigen::Index>(t)) = f.data.col(static_cast<Eigen::Index>(order[t]));
  }
  return seq;
}

FeatureMap ss3d_refold(const Matrix& seq, Dims3 dims, int direction) {
  const auto order = scan_order(dims, direction);
  if (static_cast<std::size_t>(seq.cols()) != order.size()) throw ConfigError("sequence length does not match dims");
  FeatureMap f{dims, Matrix(seq.rows(), seq.cols())};
  for (std::size_t t = 0; t < order.size(); ++t) {
    f.data.col(static_cast<Eigen::Index>(order[t])) = seq.col(static_cast<Eigen::Index>(t));
  }
  return f;
}

}  // namespace mtsct::nn
