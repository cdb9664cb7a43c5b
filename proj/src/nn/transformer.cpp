#include "mtsct/nn/transformer.hpp"

#include <cmath>

namespace mtsct::nn {

TransformerBottleneck::TransformerBottleneck(ParamSet& ps, const std::string& name, int channels, Dims3 grid,
                                             int layers, int heads, Rng& rng)
    : heads_(heads), grid_(grid) {
  if (heads < 1 || channels % heads != 0) throw ConfigError("transformer heads must divide the bottleneck width");
  if (layers < 1) throw ConfigError("transformer needs at least one layer");
  const auto tokens = static_cast<Eigen::Index>(grid.voxels());
  Matrix pos(channels, tokens);
  std::normal_distribution<double> dist(0.0, 0.5);
  for (Eigen::Index j = 0; j < tokens; ++j)
    for (Eigen::Index i = 0; i < channels; ++i) pos(i, j) = dist(rng);
  pos_ = ps.add(name + ".pos", pos);
  for (int l = 0; l < layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Layer layer;
    layer.ln1 = LayerNorm(ps, p + ".ln1", channels);
    layer.q = Linear(ps, p + ".q", channels, channels, rng);
    layer.k = Linear(ps, p + ".k", channels, channels, rng);
    layer.v = Linear(ps, p + ".v", channels, channels, rng);
    layer.o = Linear(ps, p + ".o", channels, channels, rng, 0.5);
    layer.ln2 = LayerNorm(ps, p + ".ln2", channels);
    layer.ff1 = Linear(ps, p + ".ff1", channels, 2 * channels, rng);
    layer.ff2 = Linear(ps, p + ".ff2", 2 * channels, channels, rng, 0.5);
    layers_.push_back(layer);
  }
}

FeatureMap TransformerBottleneck::forward(const FeatureMap& x, Cache* cache) const {
  if (!(x.dims == grid_)) {
    throw ConfigError("transformer bottleneck built for grid " + to_string(grid_) + ", got " + to_string(x.dims));
  }
  const Eigen::Index c = x.data.rows();
  const Eigen::Index dh = c / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (cache) {
    cache->dims = x.dims;
    cache->layers.clear();
  }
  Matrix h = x.data;
  for (const auto& layer : layers_) {
    LayerCache lc;
    Matrix attn_in = layer.ln1.forward(h, &lc.ln1) + pos_->value;
    Matrix q = layer.q.forward(attn_in);
    Matrix k = layer.k.forward(attn_in);
    Matrix v = layer.v.forward(attn_in);
    Matrix heads_out(c, h.cols());
    for (int hd = 0; hd < heads_; ++hd) {
      const auto qh = q.middleRows(hd * dh, dh);
      const auto kh = k.middleRows(hd * dh, dh);
      const auto vh = v.middleRows(hd * dh, dh);
      Matrix scores = (qh.transpose() * kh) * inv_sqrt;
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double m = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - m).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      heads_out.middleRows(hd * dh, dh) = vh * scores.transpose();
      lc.probs.push_back(std::move(scores));
    }
    Matrix x_mid = h + layer.o.forward(heads_out);
    Matrix ff_in = layer.ln2.forward(x_mid, &lc.ln2);
    Matrix ff_pre = layer.ff1.forward(ff_in);
    h = x_mid + layer.ff2.forward(silu(ff_pre));
    if (cache) {
      lc.attn_in = std::move(attn_in);
      lc.q = std::move(q);
      lc.k = std::move(k);
      lc.v = std::move(v);
      lc.heads_out = std::move(heads_out);
      lc.x_mid = std::move(x_mid);
      lc.ff_in = std::move(ff_in);
      lc.ff_pre = std::move(ff_pre);
      cache->layers.push_back(std::move(lc));
    }
  }
  return {x.dims, h};
}

FeatureMap TransformerBottleneck::backward(const Cache& cache, const FeatureMap& dy, GradBuffer& g) const {
  Matrix dh_out = dy.data;
  const Eigen::Index c = dh_out.rows();
  const Eigen::Index dh = c / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    const auto& layer = layers_[static_cast<std::size_t>(li)];
    const auto& lc = cache.layers[static_cast<std::size_t>(li)];
    // feed-forward residual
    const Matrix dff_act = layer.ff2.backward(silu(lc.ff_pre), dh_out, g);
    const Matrix dff_in = layer.ff1.backward(lc.ff_in, silu_backward(lc.ff_pre, dff_act), g);
    const Matrix dx_mid = dh_out + layer.ln2.backward(lc.ln2, dff_in, g);
    // attention residual
    const Matrix dheads = layer.o.backward(lc.heads_out, dx_mid, g);
    Matrix dq(c, dx_mid.cols()), dk(c, dx_mid.cols()), dv(c, dx_mid.cols());
    for (int hd = 0; hd < heads_; ++hd) {
      const auto& p = lc.probs[static_cast<std::size_t>(hd)];
      const auto qh = lc.q.middleRows(hd * dh, dh);
      const auto kh = lc.k.middleRows(hd * dh, dh);
      const auto vh = lc.v.middleRows(hd * dh, dh);
      const auto doh = dheads.middleRows(hd * dh, dh);
      dv.middleRows(hd * dh, dh) = doh * p;
      const Matrix dp = doh.transpose() * vh;
      const Eigen::VectorXd rowdot = (dp.cwiseProduct(p)).rowwise().sum();
      const Matrix ds = p.cwiseProduct(dp.colwise() - rowdot) * inv_sqrt;
      dq.middleRows(hd * dh, dh) = kh * ds.transpose();
      dk.middleRows(hd * dh, dh) = qh * ds;
    }
    Matrix dattn_in = layer.q.backward(lc.attn_in, dq, g);
    dattn_in += layer.k.backward(lc.attn_in, dk, g);
    dattn_in += layer.v.backward(lc.attn_in, dv, g);
    g[*pos_] += dattn_in;
    dh_out = dx_mid + layer.ln1.backward(lc.ln1, dattn_in, g);
  }
  return {cache.dims, dh_out};
}

}  // namespace mtsct::nn
