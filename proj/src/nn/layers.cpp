#include "mtsct/nn/layers.hpp"

#include <cmath>

namespace mtsct::nn {

// ---------------------------------------------------------------------------
// ParamSet / GradBuffer

Param* ParamSet::add(std::string name, Matrix init) {
  for (const auto& p : params_) {
    if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
  }
  params_.push_back(Param{std::move(name), std::move(init), params_.size()});
  return &params_.back();
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Param* ParamSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Param* ParamSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::vector<Matrix> ParamSet::values() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParamSet::assign(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw ConfigError("parameter snapshot does not match the model");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != params_[i].value.rows() || values[i].cols() != params_[i].value.cols()) {
      throw ConfigError("parameter '" + params_[i].name + "' has a mismatched shape");
    }
    params_[i].value = values[i];
  }
}

GradBuffer::GradBuffer(const ParamSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
  }
}

void GradBuffer::zero() {
  for (auto& g : grads_) g.setZero();
}

void GradBuffer::add(const GradBuffer& other) {
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
}

void GradBuffer::scale(double s) {
  for (auto& g : grads_) g *= s;
}

// ---------------------------------------------------------------------------
// Activations

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

Matrix silu(const Matrix& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix silu_backward(const Matrix& x, const Matrix& dy) {
  return dy.binaryExpr(x, [](double g, double v) {
    const double s = sigmoid(v);
    return g * s * (1.0 + v * (1.0 - s));
  });
}

// ---------------------------------------------------------------------------
// Linear / LayerNorm

namespace {

Matrix gaussian_matrix(Rng& rng, int rows, int cols, double sigma) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, sigma);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

}  // namespace

Linear::Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double init_scale) {
  w_ = ps.add(name + ".weight", gaussian_matrix(rng, out, in, init_scale / std::sqrt(static_cast<double>(in))));
  b_ = ps.add(name + ".bias", Matrix::Zero(out, 1));
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = w_->value * x;
  y.colwise() += b_->value.col(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy, GradBuffer& g) const {
  g[*w_].noalias() += dy * x.transpose();
  g[*b_] += dy.rowwise().sum();
  return w_->value.transpose() * dy;
}

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, int channels) {
  gamma_ = ps.add(name + ".gamma", Matrix::Ones(channels, 1));
  beta_ = ps.add(name + ".beta", Matrix::Zero(channels, 1));
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const double c = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mean = x.colwise().sum() / c;
  Matrix centered = x.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / c;
  const Eigen::RowVectorXd inv_std = (var.array() + kEps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix y = (xhat.array().colwise() * gamma_->value.col(0).array()).colwise() + beta_->value.col(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std.transpose();
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy, GradBuffer& g) const {
  g[*gamma_] += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  g[*beta_] += dy.rowwise().sum();
  const Matrix dxhat = dy.array().colwise() * gamma_->value.col(0).array();
  const double c = static_cast<double>(dy.rows());
  const Eigen::RowVectorXd mean_d = dxhat.colwise().sum() / c;
  const Eigen::RowVectorXd mean_dx = (dxhat.array() * cache.xhat.array()).colwise().sum() / c;
  Matrix dx = dxhat;
  dx.rowwise() -= mean_d;
  dx -= (cache.xhat.array().rowwise() * mean_dx.array()).matrix();
  dx = dx.array().rowwise() * cache.inv_std.transpose().array();
  return dx;
}

// ---------------------------------------------------------------------------
// Conv3d

Matrix im2col3(const FeatureMap& x) {
  const Dims3 d = x.dims;
  const int c = x.channels();
  const Eigen::Index v_count = static_cast<Eigen::Index>(d.voxels());
  Matrix col = Matrix::Zero(27 * c, v_count);
  const double* src = x.data.data();
  double* dst = col.data();
  const std::size_t rows = static_cast<std::size_t>(27 * c);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int xx = 0; xx < d.x; ++xx) {
        const std::size_t v = linear_index(d, xx, y, z);
        double* out = dst + v * rows;
        int k = 0;
        for (int dz = -1; dz <= 1; ++dz) {
          const int nz = z + dz;
          for (int dy = -1; dy <= 1; ++dy) {
            const int ny = y + dy;
            for (int dx = -1; dx <= 1; ++dx, ++k) {
              const int nx = xx + dx;
              if (nx < 0 || ny < 0 || nz < 0 || nx >= d.x || ny >= d.y || nz >= d.z) continue;
              const double* in = src + linear_index(d, nx, ny, nz) * static_cast<std::size_t>(c);
              std::copy(in, in + c, out + static_cast<std::size_t>(k * c));
            }
          }
        }
      }
  return col;
}

Matrix col2im3(const Matrix& col, Dims3 d, int c) {
  Matrix out = Matrix::Zero(c, static_cast<Eigen::Index>(d.voxels()));
  const double* src = col.data();
  double* dst = out.data();
  const std::size_t rows = static_cast<std::size_t>(27 * c);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int xx = 0; xx < d.x; ++xx) {
        const std::size_t v = linear_index(d, xx, y, z);
        const double* in = src + v * rows;
        int k = 0;
        for (int dz = -1; dz <= 1; ++dz) {
          const int nz = z + dz;
          for (int dy = -1; dy <= 1; ++dy) {
            const int ny = y + dy;
            for (int dx = -1; dx <= 1; ++dx, ++k) {
              const int nx = xx + dx;
              if (nx < 0 || ny < 0 || nz < 0 || nx >= d.x || ny >= d.y || nz >= d.z) continue;
              double* o = dst + linear_index(d, nx, ny, nz) * static_cast<std::size_t>(c);
              const double* g = in + static_cast<std::size_t>(k * c);
              for (int ch = 0; ch < c; ++ch) o[ch] += g[ch];
            }
          }
        }
      }
  return out;
}

Conv3d::Conv3d(ParamSet& ps, const std::string& name, int in, int out, Rng& rng) : in_(in) {
  w_ = ps.add(name + ".weight", gaussian_matrix(rng, out, 27 * in, std::sqrt(2.0 / (27.0 * in))));
  b_ = ps.add(name + ".bias", Matrix::Zero(out, 1));
}

namespace {

// Zero-padded, channel-planar copy: row = padded voxel index, column = channel.
struct PaddedGrid {
  Dims3 d;
  Eigen::Index sy, sz;  // padded strides
  Eigen::Index first, count;

  explicit PaddedGrid(Dims3 dims) : d(dims) {
    sy = d.x + 2;
    sz = sy * (d.y + 2);
    first = at(0, 0, 0);
    count = at(d.x - 1, d.y - 1, d.z - 1) - first + 1;
  }
  Eigen::Index at(int x, int y, int z) const { return (x + 1) + sy * (y + 1) + sz * (z + 1); }
  Eigen::Index rows() const { return sz * (d.z + 2); }
  Eigen::Index offset(int k) const { return (k % 3 - 1) + sy * ((k / 3) % 3 - 1) + sz * (k / 9 - 1); }
};

Matrix pad_planar(const FeatureMap& x, const PaddedGrid& g) {
  Matrix p = Matrix::Zero(g.rows(), x.data.rows());
  Eigen::Index v = 0;
  for (int z = 0; z < g.d.z; ++z)
    for (int y = 0; y < g.d.y; ++y) {
      const Eigen::Index row = g.at(0, y, z);
      for (int xx = 0; xx < g.d.x; ++xx, ++v) p.row(row + xx) = x.data.col(v).transpose();
    }
  return p;
}

}  // namespace

FeatureMap Conv3d::forward(const FeatureMap& x, Cache* cache) const {
  if (x.channels() != in_) throw ConfigError("conv input channel mismatch");
  const PaddedGrid g(x.dims);
  Matrix p = pad_planar(x, g);
  const Matrix& w = w_->value;
  Matrix o = Matrix::Zero(g.count, w.rows());
  for (int k = 0; k < 27; ++k) {
    o.noalias() += p.middleRows(g.first + g.offset(k), g.count) * w.middleCols(k * in_, in_).transpose();
  }
  FeatureMap y{x.dims, Matrix(w.rows(), static_cast<Eigen::Index>(x.dims.voxels()))};
  Eigen::Index v = 0;
  for (int z = 0; z < g.d.z; ++z)
    for (int yy = 0; yy < g.d.y; ++yy) {
      const Eigen::Index row = g.at(0, yy, z) - g.first;
      for (int xx = 0; xx < g.d.x; ++xx, ++v) y.data.col(v) = o.row(row + xx).transpose() + b_->value.col(0);
    }
  if (cache) cache->padded = std::move(p);
  return y;
}

FeatureMap Conv3d::backward(const Cache& cache, Dims3 dims, const Matrix& dy, GradBuffer& g) const {
  const PaddedGrid pg(dims);
  const Matrix& w = w_->value;
  Matrix dyp = Matrix::Zero(pg.count, dy.rows());
  Eigen::Index v = 0;
  for (int z = 0; z < dims.z; ++z)
    for (int y = 0; y < dims.y; ++y) {
      const Eigen::Index row = pg.at(0, y, z) - pg.first;
      for (int xx = 0; xx < dims.x; ++xx, ++v) dyp.row(row + xx) = dy.col(v).transpose();
    }
  Matrix& gw = g[*w_];
  Matrix dp = Matrix::Zero(pg.rows(), in_);
  for (int k = 0; k < 27; ++k) {
    const Eigen::Index start = pg.first + pg.offset(k);
    gw.middleCols(k * in_, in_).noalias() += dyp.transpose() * cache.padded.middleRows(start, pg.count);
    dp.middleRows(start, pg.count).noalias() += dyp * w.middleCols(k * in_, in_);
  }
  g[*b_] += dy.rowwise().sum();
  FeatureMap dx{dims, Matrix(in_, static_cast<Eigen::Index>(dims.voxels()))};
  v = 0;
  for (int z = 0; z < dims.z; ++z)
    for (int y = 0; y < dims.y; ++y) {
      const Eigen::Index row = pg.at(0, y, z);
      for (int xx = 0; xx < dims.x; ++xx, ++v) dx.data.col(v) = dp.row(row + xx).transpose();
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Pool / upsample

namespace {

Dims3 half(Dims3 d) {
  if (d.x % 2 || d.y % 2 || d.z % 2) throw ConfigError("pooling needs even dims, got " + to_string(d));
  return {d.x / 2, d.y / 2, d.z / 2};
}

}  // namespace

FeatureMap avg_pool2(const FeatureMap& x) {
  const Dims3 lo = half(x.dims);
  FeatureMap out{lo, Matrix::Zero(x.channels(), static_cast<Eigen::Index>(lo.voxels()))};
  for (int z = 0; z < x.dims.z; ++z)
    for (int y = 0; y < x.dims.y; ++y)
      for (int xx = 0; xx < x.dims.x; ++xx) {
        const auto dst = static_cast<Eigen::Index>(linear_index(lo, xx / 2, y / 2, z / 2));
        out.data.col(dst) += x.data.col(static_cast<Eigen::Index>(linear_index(x.dims, xx, y, z)));
      }
  out.data *= 0.125;
  return out;
}

FeatureMap avg_pool2_backward(const FeatureMap& dy, Dims3 in_dims) {
  FeatureMap out{in_dims, Matrix(dy.channels(), static_cast<Eigen::Index>(in_dims.voxels()))};
  for (int z = 0; z < in_dims.z; ++z)
    for (int y = 0; y < in_dims.y; ++y)
      for (int xx = 0; xx < in_dims.x; ++xx) {
        out.data.col(static_cast<Eigen::Index>(linear_index(in_dims, xx, y, z))) =
            0.125 * dy.data.col(static_cast<Eigen::Index>(linear_index(dy.dims, xx / 2, y / 2, z / 2)));
      }
  return out;
}

FeatureMap upsample2(const FeatureMap& x) {
  const Dims3 hi{x.dims.x * 2, x.dims.y * 2, x.dims.z * 2};
  FeatureMap out{hi, Matrix(x.channels(), static_cast<Eigen::Index>(hi.voxels()))};
  for (int z = 0; z < hi.z; ++z)
    for (int y = 0; y < hi.y; ++y)
      for (int xx = 0; xx < hi.x; ++xx) {
        out.data.col(static_cast<Eigen::Index>(linear_index(hi, xx, y, z))) =
            x.data.col(static_cast<Eigen::Index>(linear_index(x.dims, xx / 2, y / 2, z / 2)));
      }
  return out;
}

FeatureMap upsample2_backward(const FeatureMap& dy, Dims3 low_dims) {
  FeatureMap out{low_dims, Matrix::Zero(dy.channels(), static_cast<Eigen::Index>(low_dims.voxels()))};
  for (int z = 0; z < dy.dims.z; ++z)
    for (int y = 0; y < dy.dims.y; ++y)
      for (int xx = 0; xx < dy.dims.x; ++xx) {
        out.data.col(static_cast<Eigen::Index>(linear_index(low_dims, xx / 2, y / 2, z / 2))) +=
            dy.data.col(static_cast<Eigen::Index>(linear_index(dy.dims, xx, y, z)));
      }
  return out;
}

}  // namespace mtsct::nn
