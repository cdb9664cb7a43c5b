#include "run_config.hpp"

#include <fstream>
#include <sstream>

namespace mtsct::cli {

using nlohmann::ordered_json;

namespace {

ordered_json dims_json(const Dims3& d) { return ordered_json::array({d.x, d.y, d.z}); }

Dims3 dims_from(const ordered_json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(key + " must be a list of three integers");
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

// Every key of `user` must exist in `ref`, recursively through objects.
void check_keys(const ordered_json& user, const ordered_json& ref, const std::string& where) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!ref.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    const auto& r = ref.at(it.key());
    if (r.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + path + "' must be an object");
      check_keys(it.value(), r, path);
    }
  }
}

RunConfig from_json(const ordered_json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();

  const auto& p = j.at("phantom");
  c.phantom.dims = dims_from(p.at("dims"), "phantom.dims");
  c.phantom.outer_radius_frac = p.at("outer_radius_frac").get<double>();
  c.phantom.shell_thickness_vox = p.at("shell_thickness_vox").get<int>();
  c.phantom.bone_hu = p.at("bone_hu").get<double>();
  c.phantom.tissue_hu = p.at("tissue_hu").get<double>();
  c.phantom.air_hu = p.at("air_hu").get<double>();
  c.phantom.noise_sigma = p.at("noise_sigma").get<double>();
  c.phantom.bias_field_amp = p.at("bias_field_amp").get<double>();
  c.phantom.irregularity_amp = p.at("irregularity_amp").get<double>();

  const auto& co = j.at("cohort");
  c.cohort_size = co.at("size").get<std::size_t>();
  c.shifted = co.at("shifted").get<bool>();

  const auto& t = j.at("train");
  c.train.mode = nn::parse_task_mode(t.at("mode").get<std::string>());
  c.train.patch = dims_from(t.at("patch"), "train.patch");
  c.train.patches_per_subject = t.at("patches_per_subject").get<int>();
  c.train.max_epochs = t.at("max_epochs").get<int>();
  c.train.early_stop_patience = t.at("early_stop_patience").get<int>();
  c.train.lr = t.at("lr").get<double>();
  c.train.finetune_lr = t.at("finetune_lr").get<double>();
  c.train.batch_size = t.at("batch_size").get<int>();
  const auto& b = t.at("backbone");
  auto& bb = c.train.backbone;
  bb.levels = b.at("levels").get<int>();
  bb.base_width = b.at("base_width").get<int>();
  bb.bottleneck = nn::parse_bottleneck(b.at("bottleneck").get<std::string>());
  bb.vss3d_blocks = b.at("vss3d_blocks").get<int>();
  bb.scan_directions = b.at("scan_directions").get<int>();
  bb.droppath_rate = b.at("droppath_rate").get<double>();
  bb.state_dim = b.at("state_dim").get<int>();
  bb.transformer_layers = b.at("transformer_layers").get<int>();
  bb.transformer_heads = b.at("transformer_heads").get<int>();
  const auto& l = t.at("loss");
  c.train.loss.lambda = l.at("lambda").get<double>();
  c.train.loss.dice_smooth = l.at("dice_smooth").get<double>();
  c.train.loss.empty_region_rule = parse_empty_region_rule(l.at("empty_region_rule").get<std::string>());
  c.train.loss.soft_weight = l.at("soft_weight").get<double>();
  c.train.loss.seg_threshold = l.at("seg_threshold").get<double>();
  c.train.loss.dilation_iters = l.at("dilation_iters").get<int>();

  const auto& in = j.at("inference");
  c.inference.stride = dims_from(in.at("stride"), "inference.stride");
  c.inference.seg_threshold = in.at("seg_threshold").get<double>();
  c.inference.hu_threshold = in.at("hu_threshold").get<double>();
  c.inference.use_gt_mask_reference = in.at("use_gt_mask_reference").get<bool>();
  c.inference.split = in.at("split").get<std::string>();

  const auto& pa = j.at("paths");
  c.paths.cohort = pa.at("cohort").get<std::string>();
  c.paths.checkpoint = pa.at("checkpoint").get<std::string>();
  c.paths.single = pa.at("single").get<std::string>();
  c.paths.multi = pa.at("multi").get<std::string>();
  c.train.seed = c.seed;
  return c;
}

}  // namespace

void RunConfig::validate() const {
  phantom.validate();
  if (cohort_size < 10) throw ConfigError("cohort.size must be at least 10");
  train.validate();
  if (!inference.stride.positive()) throw ConfigError("inference.stride must be positive");
  if (!(inference.seg_threshold > 0.0 && inference.seg_threshold < 1.0)) {
    throw ConfigError("inference.seg_threshold must lie in (0, 1)");
  }
  const auto& s = inference.split;
  if (s != "train" && s != "val" && s != "test" && s != "all") {
    throw ConfigError("inference.split must be train, val, test or all, got '" + s + "'");
  }
}

RunConfig default_run_config() {
  RunConfig c;
  // desk-scale defaults sized so the full generate/train/evaluate/compare sequence stays short on one core
  c.train.max_epochs = 2;
  c.train.patches_per_subject = 100;
  c.train.patch = {32, 32, 32};
  c.train.backbone.base_width = 4;
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  const auto& p = c.phantom;
  j["phantom"] = {{"dims", dims_json(p.dims)},
                  {"outer_radius_frac", p.outer_radius_frac},
                  {"shell_thickness_vox", p.shell_thickness_vox},
                  {"bone_hu", p.bone_hu},
                  {"tissue_hu", p.tissue_hu},
                  {"air_hu", p.air_hu},
                  {"noise_sigma", p.noise_sigma},
                  {"bias_field_amp", p.bias_field_amp},
                  {"irregularity_amp", p.irregularity_amp}};
  j["cohort"] = {{"size", c.cohort_size}, {"shifted", c.shifted}};
  const auto& t = c.train;
  const auto& b = t.backbone;
  ordered_json backbone = {{"levels", b.levels},
                           {"base_width", b.base_width},
                           {"bottleneck", nn::to_string(b.bottleneck)},
                           {"vss3d_blocks", b.vss3d_blocks},
                           {"scan_directions", b.scan_directions},
                           {"droppath_rate", b.droppath_rate},
                           {"state_dim", b.state_dim},
                           {"transformer_layers", b.transformer_layers},
                           {"transformer_heads", b.transformer_heads}};
  ordered_json loss = {{"lambda", t.loss.lambda},
                       {"dice_smooth", t.loss.dice_smooth},
                       {"empty_region_rule", to_string(t.loss.empty_region_rule)},
                       {"soft_weight", t.loss.soft_weight},
                       {"seg_threshold", t.loss.seg_threshold},
                       {"dilation_iters", t.loss.dilation_iters}};
  j["train"] = {{"mode", nn::to_string(t.mode)},
                {"patch", dims_json(t.patch)},
                {"patches_per_subject", t.patches_per_subject},
                {"max_epochs", t.max_epochs},
                {"early_stop_patience", t.early_stop_patience},
                {"lr", t.lr},
                {"finetune_lr", t.finetune_lr},
                {"batch_size", t.batch_size},
                {"backbone", backbone},
                {"loss", loss}};
  const auto& in = c.inference;
  j["inference"] = {{"stride", dims_json(in.stride)},
                    {"seg_threshold", in.seg_threshold},
                    {"hu_threshold", in.hu_threshold},
                    {"use_gt_mask_reference", in.use_gt_mask_reference},
                    {"split", in.split}};
  j["paths"] = {{"cohort", c.paths.cohort},
                {"checkpoint", c.paths.checkpoint},
                {"single", c.paths.single},
                {"multi", c.paths.multi}};
  return j;
}

RunConfig parse_run_config(const std::string& text) {
  ordered_json user;
  try {
    user = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  ordered_json merged = to_json(default_run_config());
  check_keys(user, merged, "");
  merged.merge_patch(user);
  try {
    return from_json(merged);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace mtsct::cli
