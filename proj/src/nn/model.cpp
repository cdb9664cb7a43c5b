#include "mtsct/nn/model.hpp"

#include <cstdio>
#include <sstream>

namespace mtsct::nn {

std::string to_string(BottleneckKind k) { return k == BottleneckKind::Vss3d ? "vss3d" : "transformer"; }
std::string to_string(TaskMode m) { return m == TaskMode::Multitask ? "multitask" : "single_task"; }

BottleneckKind parse_bottleneck(const std::string& s) {
  if (s == "vss3d") return BottleneckKind::Vss3d;
  if (s == "transformer") return BottleneckKind::Transformer;
  throw ConfigError("unknown bottleneck '" + s + "' (expected vss3d or transformer)");
}

TaskMode parse_task_mode(const std::string& s) {
  if (s == "multitask") return TaskMode::Multitask;
  if (s == "single_task") return TaskMode::SingleTask;
  throw ConfigError("unknown mode '" + s + "' (expected multitask or single_task)");
}

void BackboneConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
  if (levels < 2) throw ConfigError("levels must be at least 2");
  if (base_width < 4) throw ConfigError("base_width must be at least 4");
  if (scan_directions != 2 && scan_directions != 4 && scan_directions != 6) {
    throw ConfigError("scan_directions must be 2, 4 or 6");
  }
  if (!(droppath_rate >= 0.0 && droppath_rate < 1.0)) throw ConfigError("droppath_rate must lie in [0, 1)");
  if (vss3d_blocks < 0 || state_dim < 1 || transformer_layers < 1 || transformer_heads < 1) {
    throw ConfigError("bottleneck sizes must be positive");
  }
}

std::string ModelSpec::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "in_channels=" << backbone.in_channels << ";levels=" << backbone.levels << ";base_width=" << backbone.base_width
     << ";bottleneck=" << to_string(backbone.bottleneck) << ";vss3d_blocks=" << backbone.vss3d_blocks
     << ";scan_directions=" << backbone.scan_directions << ";droppath_rate=" << backbone.droppath_rate
     << ";state_dim=" << backbone.state_dim << ";transformer_layers=" << backbone.transformer_layers
     << ";transformer_heads=" << backbone.transformer_heads << ";mode=" << to_string(mode) << ";patch=" << patch.x
     << 'x' << patch.y << 'x' << patch.z;
  return os.str();
}

std::string ModelSpec::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PatchArray fuse_outputs(const ModelOutputs& o, double binarize_threshold) {
  PatchArray mask{o.seg_logits.size, std::vector<double>(o.seg_logits.values.size())};
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    mask.values[i] = sigmoid(o.seg_logits.values[i]) > binarize_threshold ? 1.0 : 0.0;
  }
  return fuse_with_mask(o, mask);
}

PatchArray fuse_with_mask(const ModelOutputs& o, const PatchArray& mask) {
  const std::size_t n = mask.values.size();
  if (o.bone_hu.values.size() != n || o.soft_hu.values.size() != n) throw DataError("fusion inputs differ in size");
  PatchArray out{mask.size, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) out.values[i] = mask.values[i] > 0.5 ? o.bone_hu.values[i] : o.soft_hu.values[i];
  return out;
}

struct UNetModel::Trace {
  std::vector<Dims3> level_dims;
  std::vector<Conv3d::Cache> enc_a, enc_b;
  std::vector<Matrix> enc_pre_a, enc_pre_b;
  std::vector<Vss3dBlock::Cache> vss;
  TransformerBottleneck::Cache transformer;
  std::vector<Matrix> up_in;
  std::vector<Conv3d::Cache> dec_a, dec_b;
  std::vector<Matrix> dec_pre_a, dec_pre_b;
  Matrix head_in;
};

UNetModel::UNetModel(const ModelSpec& spec) : spec_(spec) {
  const auto& cfg = spec_.backbone;
  cfg.validate();
  const int down = 1 << (cfg.levels - 1);
  for (int a = 0; a < 3; ++a) {
    if (spec_.patch[a] % down != 0 || spec_.patch[a] < down) {
      throw ConfigError("patch dims " + to_string(spec_.patch) + " are not divisible by 2^(levels-1) = " +
                        std::to_string(down));
    }
  }
  Rng rng(spec_.init_seed);
  auto width = [&](int l) { return cfg.base_width << l; };
  for (int l = 0; l < cfg.levels; ++l) {
    const int in = l == 0 ? cfg.in_channels : width(l - 1);
    const std::string p = "enc" + std::to_string(l);
    enc_.push_back({Conv3d(params_, p + ".a", in, width(l), rng), Conv3d(params_, p + ".b", width(l), width(l), rng)});
  }
  const int bw = width(cfg.levels - 1);
  const Dims3 grid{spec_.patch.x / down, spec_.patch.y / down, spec_.patch.z / down};
  if (cfg.bottleneck == BottleneckKind::Vss3d) {
    for (int i = 0; i < cfg.vss3d_blocks; ++i) {
      vss_.emplace_back(params_, "vss" + std::to_string(i), bw, cfg.state_dim, cfg.scan_directions, cfg.droppath_rate,
                        rng);
    }
  } else {
    transformer_ = std::make_unique<TransformerBottleneck>(params_, "transformer", bw, grid, cfg.transformer_layers,
                                                           cfg.transformer_heads, rng);
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::string p = std::to_string(l);
    up_proj_.insert(up_proj_.begin(), Linear(params_, "up" + p, width(l + 1), width(l), rng));
    dec_.insert(dec_.begin(), {Conv3d(params_, "dec" + p + ".a", width(l), width(l), rng),
                               Conv3d(params_, "dec" + p + ".b", width(l), width(l), rng)});
  }
  first_head_param_ = params_.size();
  heads_ = Linear(params_, "heads", width(0), head_count(), rng);
}

UNetModel::~UNetModel() = default;

std::size_t UNetModel::backbone_scalar_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < first_head_param_; ++i) n += static_cast<std::size_t>(params_[i].value.size());
  return n;
}

Matrix UNetModel::forward(const FeatureMap& input, Trace* trace, Rng* drop_rng) const {
  const auto& cfg = spec_.backbone;
  if (!(input.dims == spec_.patch)) {
    throw ConfigError("model expects patches of " + to_string(spec_.patch) + ", got " + to_string(input.dims));
  }
  if (input.channels() != cfg.in_channels) throw ConfigError("model input channel count mismatch");
  const auto levels = static_cast<std::size_t>(cfg.levels);
  if (trace) {
    trace->level_dims.assign(levels, Dims3{});
    trace->enc_a.assign(levels, {});
    trace->enc_b.assign(levels, {});
    trace->enc_pre_a.assign(levels, {});
    trace->enc_pre_b.assign(levels, {});
    trace->vss.assign(vss_.size(), {});
    trace->up_in.assign(levels - 1, {});
    trace->dec_a.assign(levels - 1, {});
    trace->dec_b.assign(levels - 1, {});
    trace->dec_pre_a.assign(levels - 1, {});
    trace->dec_pre_b.assign(levels - 1, {});
  }

  std::vector<FeatureMap> skips(levels);
  FeatureMap x = input;
  for (std::size_t l = 0; l < levels; ++l) {
    if (l > 0) x = avg_pool2(x);
    FeatureMap pa = enc_[l].a.forward(x, trace ? &trace->enc_a[l] : nullptr);
    FeatureMap h{pa.dims, silu(pa.data)};
    FeatureMap pb = enc_[l].b.forward(h, trace ? &trace->enc_b[l] : nullptr);
    x = FeatureMap{pb.dims, silu(pb.data)};
    if (trace) {
      trace->level_dims[l] = x.dims;
      trace->enc_pre_a[l] = std::move(pa.data);
      trace->enc_pre_b[l] = std::move(pb.data);
    }
    if (l + 1 < levels) skips[l] = x;
  }
  if (transformer_) {
    x = transformer_->forward(x, trace ? &trace->transformer : nullptr);
  } else {
    for (std::size_t i = 0; i < vss_.size(); ++i) x = vss_[i].forward(x, trace ? &trace->vss[i] : nullptr, drop_rng);
  }
  for (int li = static_cast<int>(levels) - 2; li >= 0; --li) {
    const auto l = static_cast<std::size_t>(li);
    FeatureMap proj{x.dims, up_proj_[l].forward(x.data)};
    if (trace) trace->up_in[l] = std::move(x.data);
    FeatureMap s = upsample2(proj);
    s.data += skips[l].data;
    FeatureMap pa = dec_[l].a.forward(s, trace ? &trace->dec_a[l] : nullptr);
    FeatureMap h{pa.dims, silu(pa.data)};
    FeatureMap pb = dec_[l].b.forward(h, trace ? &trace->dec_b[l] : nullptr);
    x = FeatureMap{pb.dims, silu(pb.data)};
    if (trace) {
      trace->dec_pre_a[l] = std::move(pa.data);
      trace->dec_pre_b[l] = std::move(pb.data);
    }
  }
  Matrix out = heads_.forward(x.data);
  if (trace) trace->head_in = std::move(x.data);
  return out;
}

void UNetModel::backward(const Trace& t, const Matrix& dheads, GradBuffer& g) const {
  const auto levels = static_cast<std::size_t>(spec_.backbone.levels);
  Matrix dx = heads_.backward(t.head_in, dheads, g);
  std::vector<Matrix> dskip(levels);
  for (std::size_t l = 0; l + 1 < levels; ++l) {
    const Dims3 dims = t.level_dims[l];
    const Matrix dpb = silu_backward(t.dec_pre_b[l], dx);
    const FeatureMap dh = dec_[l].b.backward(t.dec_b[l], dims, dpb, g);
    const Matrix dpa = silu_backward(t.dec_pre_a[l], dh.data);
    const FeatureMap ds = dec_[l].a.backward(t.dec_a[l], dims, dpa, g);
    dskip[l] = ds.data;
    const FeatureMap dproj = upsample2_backward(ds, t.level_dims[l + 1]);
    dx = up_proj_[l].backward(t.up_in[l], dproj.data, g);
  }
  FeatureMap dbott{t.level_dims[levels - 1], std::move(dx)};
  if (transformer_) {
    dbott = transformer_->backward(t.transformer, dbott, g);
  } else {
    for (std::size_t i = vss_.size(); i-- > 0;) dbott = vss_[i].backward(t.vss[i], dbott, g);
  }
  Matrix denc = std::move(dbott.data);
  for (std::size_t l = levels; l-- > 0;) {
    if (l + 1 < levels) denc += dskip[l];
    const Dims3 dims = t.level_dims[l];
    const Matrix dpb = silu_backward(t.enc_pre_b[l], denc);
    const FeatureMap dh = enc_[l].b.backward(t.enc_b[l], dims, dpb, g);
    const Matrix dpa = silu_backward(t.enc_pre_a[l], dh.data);
    const FeatureMap din = enc_[l].a.backward(t.enc_a[l], dims, dpa, g);
    if (l == 0) break;
    denc = avg_pool2_backward(din, t.level_dims[l - 1]).data;
  }
}

void UNetModel::train_step(const FeatureMap& input, Rng* drop_rng,
                           const std::function<Matrix(const Matrix&)>& loss_grad, GradBuffer& g) const {
  Trace trace;
  const Matrix heads = forward(input, &trace, drop_rng);
  backward(trace, loss_grad(heads), g);
}

ModelOutputs UNetModel::predict(const FeatureMap& input) const {
  if (spec_.mode != TaskMode::Multitask) throw ConfigError("predict() splits multitask heads only");
  return split_heads(forward(input), input.dims);
}

std::vector<Matrix> UNetModel::forward_batch(const std::vector<FeatureMap>& inputs) const {
  std::vector<Matrix> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(forward(in));
  return out;
}

FeatureMap to_feature_map(const std::vector<PatchArray>& channels) {
  if (channels.empty()) throw ConfigError("no input channels");
  const Dims3 d = channels.front().size;
  FeatureMap f{d, Matrix(static_cast<Eigen::Index>(channels.size()), static_cast<Eigen::Index>(d.voxels()))};
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (!(channels[c].size == d)) throw DataError("input channels differ in size");
    for (std::size_t v = 0; v < d.voxels(); ++v) {
      f.data(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(v)) = channels[c].values[v];
    }
  }
  return f;
}

PatchArray row_to_patch(const Matrix& heads, int row, Dims3 dims) {
  PatchArray p{dims, std::vector<double>(dims.voxels())};
  for (std::size_t v = 0; v < p.values.size(); ++v) p.values[v] = heads(row, static_cast<Eigen::Index>(v));
  return p;
}

ModelOutputs split_heads(const Matrix& heads, Dims3 dims) {
  if (heads.rows() != 3) throw ConfigError("multitask outputs need three heads");
  return {row_to_patch(heads, 0, dims), row_to_patch(heads, 1, dims), row_to_patch(heads, 2, dims)};
}

}  // namespace mtsct::nn
