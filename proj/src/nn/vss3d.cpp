#include "mtsct/nn/vss3d.hpp"

namespace mtsct::nn {

Vss3dBlock::Vss3dBlock(ParamSet& ps, const std::string& name, int channels, int state_dim, int directions,
                       double droppath_rate, Rng& rng)
    : norm_(ps, name + ".norm", channels),
      ssm_(ps, name + ".ssm", channels, state_dim, rng),
      gate1_(ps, name + ".gate1", channels, channels, rng),
      gate2_(ps, name + ".gate2", channels, channels, rng, 0.5),
      directions_(directions),
      droppath_rate_(droppath_rate) {
  if (directions != 2 && directions != 4 && directions != 6) throw ConfigError("scan_directions must be 2, 4 or 6");
  if (!(droppath_rate >= 0.0 && droppath_rate < 1.0)) throw ConfigError("droppath_rate must lie in [0, 1)");
}

FeatureMap Vss3dBlock::forward(const FeatureMap& x, Cache* cache, Rng* drop_rng) const {
  bool dropped = false;
  if (drop_rng && droppath_rate_ > 0.0) dropped = uniform(*drop_rng, 0.0, 1.0) < droppath_rate_;
  return forward_with_drop(x, cache, dropped, drop_rng != nullptr);
}

FeatureMap Vss3dBlock::forward_with_drop(const FeatureMap& x, Cache* cache, bool dropped, bool training) const {
  const double scale = dropped ? 0.0 : (training ? 1.0 / (1.0 - droppath_rate_) : 1.0);
  if (cache) {
    cache->dims = x.dims;
    cache->path_scale = scale;
    cache->scans.clear();
  }
  if (dropped) return x;

  LayerNorm::Cache norm_cache;
  Matrix z = norm_.forward(x.data, cache ? &norm_cache : nullptr);
  Matrix y = Matrix::Zero(x.data.rows(), x.data.cols());
  for (int d = 0; d < directions_; ++d) {
    FeatureMap zf{x.dims, z};
    SelectiveSSM::Cache sc;
    const Matrix seq_out = ssm_.forward(ss3d_unfold(zf, d), cache ? &sc : nullptr);
    y += ss3d_refold(seq_out, x.dims, d).data;
    if (cache) cache->scans.push_back(std::move(sc));
  }
  y /= static_cast<double>(directions_);
  Matrix gate_pre = gate1_.forward(z);
  Matrix gate = gate2_.forward(silu(gate_pre));
  FeatureMap out{x.dims, x.data + scale * y.cwiseProduct(gate)};
  if (cache) {
    cache->norm = std::move(norm_cache);
    cache->z = std::move(z);
    cache->y = std::move(y);
    cache->gate_pre = std::move(gate_pre);
    cache->gate = std::move(gate);
  }
  return out;
}

FeatureMap Vss3dBlock::backward(const Cache& c, const FeatureMap& dy, GradBuffer& g) const {
  if (c.path_scale == 0.0) return dy;
  const Matrix du = c.path_scale * dy.data;
  const Matrix dy_ssm = du.cwiseProduct(c.gate);
  const Matrix dgate = du.cwiseProduct(c.y);
  const Matrix dh = gate2_.backward(silu(c.gate_pre), dgate, g);
  Matrix dz = gate1_.backward(c.z, silu_backward(c.gate_pre, dh), g);
  const FeatureMap dy_mean{c.dims, dy_ssm / static_cast<double>(directions_)};
  for (int d = 0; d < directions_; ++d) {
    const Matrix dseq = ssm_.backward(c.scans[static_cast<std::size_t>(d)], ss3d_unfold(dy_mean, d), g);
    dz += ss3d_refold(dseq, c.dims, d).data;
  }
  return {c.dims, dy.data + norm_.backward(c.norm, dz, g)};
}

}  // namespace mtsct::nn
