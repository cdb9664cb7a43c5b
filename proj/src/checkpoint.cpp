#include "mtsct/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mtsct {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'M', 'T', 'P', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}

void write_blob(const fs::path& path, const nn::Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
  if (!os) throw DataError("failed writing " + path.string());
}

nn::Matrix read_blob(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing parameter blob " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + " is not a parameter blob");
  const auto rows = get_u32(is), cols = get_u32(is);
  nn::Matrix m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = std::bit_cast<float>(get_u32(is));
  if (!is) throw FormatError(path.string() + " is truncated");
  return m;
}

}  // namespace

Checkpoint snapshot(const nn::UNetModel& model, int epoch, std::uint64_t root_seed) {
  Checkpoint c;
  c.spec = model.spec();
  c.epoch = epoch;
  c.root_seed = root_seed;
  const auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    c.names.push_back(ps[i].name);
    c.params.push_back(ps[i].value.cast<float>().cast<double>());
  }
  return c;
}

std::unique_ptr<nn::UNetModel> instantiate(const Checkpoint& ckpt) {
  auto model = std::make_unique<nn::UNetModel>(ckpt.spec);
  const auto& ps = model->params();
  if (ps.size() != ckpt.params.size()) throw ConfigError("checkpoint parameter count does not match its config");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (i < ckpt.names.size() && ckpt.names[i] != ps[i].name) {
      throw ConfigError("checkpoint parameter '" + ckpt.names[i] + "' does not match '" + ps[i].name + "'");
    }
  }
  model->params().assign(ckpt.params);
  return model;
}

nn::ModelSpec parse_canonical_spec(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("bad config item '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("checkpoint config lacks '" + k + "'");
    return it->second;
  };
  nn::ModelSpec s;
  try {
    auto& b = s.backbone;
    b.in_channels = std::stoi(get("in_channels"));
    b.levels = std::stoi(get("levels"));
    b.base_width = std::stoi(get("base_width"));
    b.bottleneck = nn::parse_bottleneck(get("bottleneck"));
    b.vss3d_blocks = std::stoi(get("vss3d_blocks"));
    b.scan_directions = std::stoi(get("scan_directions"));
    b.droppath_rate = std::stod(get("droppath_rate"));
    b.state_dim = std::stoi(get("state_dim"));
    b.transformer_layers = std::stoi(get("transformer_layers"));
    b.transformer_heads = std::stoi(get("transformer_heads"));
    s.mode = nn::parse_task_mode(get("mode"));
    int px = 0, py = 0, pz = 0;
    if (std::sscanf(get("patch").c_str(), "%dx%dx%d", &px, &py, &pz) != 3) throw FormatError("bad patch field");
    s.patch = {px, py, pz};
  } catch (const std::logic_error&) {
    throw FormatError("malformed checkpoint config '" + text + "'");
  }
  return s;
}

void save_checkpoint(const Checkpoint& c, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  std::ofstream m(dir / "manifest.txt");
  if (!m) throw DataError("cannot write " + (dir / "manifest.txt").string());
  m.precision(17);
  m << "checkpoint_version: 1\n";
  m << "digest: " << c.spec.digest() << '\n';
  m << "config: " << c.spec.canonical() << '\n';
  m << "init_seed: " << c.spec.init_seed << '\n';
  m << "epoch: " << c.epoch << '\n';
  m << "root_seed: " << c.root_seed << '\n';
  m << "ct_record: " << c.ct_record.vmin << ' ' << c.ct_record.vmax << '\n';
  m << "val_history:";
  for (double v : c.val_history) m << ' ' << v;
  m << '\n';
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof(file), "params/%03zu.bin", i);
    write_blob(dir / file, c.params[i]);
    m << "param: " << c.names[i] << ' ' << c.params[i].rows() << ' ' << c.params[i].cols() << ' ' << file << '\n';
  }
  if (c.template_mask) {
    save_mask(*c.template_mask, dir / "template.cvf");
    m << "template: template.cvf\n";
  }
  if (!m) throw DataError("failed writing checkpoint manifest");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.txt";
  std::ifstream m(mpath);
  if (!m) throw DataError("missing checkpoint manifest " + mpath.string());
  Checkpoint c;
  std::string line, digest, config;
  bool have_version = false;
  while (std::getline(m, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    try {
      if (key == "checkpoint_version") {
        if (value != "1") throw FormatError("unsupported checkpoint version " + value);
        have_version = true;
      } else if (key == "digest") {
        digest = value;
      } else if (key == "config") {
        config = value;
      } else if (key == "init_seed") {
        c.spec.init_seed = std::stoull(value);
      } else if (key == "epoch") {
        c.epoch = std::stoi(value);
      } else if (key == "root_seed") {
        c.root_seed = std::stoull(value);
      } else if (key == "ct_record") {
        std::istringstream vs(value);
        NormalizationRecord r{0.0, 0.0, IntensityKind::HU};
        if (!(vs >> r.vmin >> r.vmax) || !(r.vmax > r.vmin)) throw FormatError("bad ct_record line '" + line + "'");
        c.ct_record = r;
      } else if (key == "val_history") {
        std::istringstream vs(value);
        double v;
        while (vs >> v) c.val_history.push_back(v);
      } else if (key == "param") {
        std::istringstream ps(value);
        std::string name, file;
        long rows = 0, cols = 0;
        if (!(ps >> name >> rows >> cols >> file)) throw FormatError("bad param line '" + line + "'");
        nn::Matrix mat = read_blob(dir / file);
        if (mat.rows() != rows || mat.cols() != cols) throw FormatError("blob " + file + " disagrees with the manifest");
        c.names.push_back(name);
        c.params.push_back(std::move(mat));
      } else if (key == "template") {
        c.template_mask = load_mask(dir / value);
      }
    } catch (const std::logic_error&) {
      throw FormatError("malformed manifest line '" + line + "'");
    }
  }
  if (!have_version) throw FormatError(mpath.string() + " is not a checkpoint manifest");
  const std::uint64_t seed = c.spec.init_seed;
  c.spec = parse_canonical_spec(config);
  c.spec.init_seed = seed;
  if (c.spec.digest() != digest) throw FormatError("checkpoint digest does not match its config");
  return c;
}

}  // namespace mtsct
