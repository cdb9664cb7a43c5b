#include "mtsct/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace mtsct {

std::string to_string(const Dims3& d) {
  return "(" + std::to_string(d.x) + ", " + std::to_string(d.y) + ", " + std::to_string(d.z) + ")";
}

std::string to_string(const Coord3& c) {
  return "(" + std::to_string(c.x) + ", " + std::to_string(c.y) + ", " + std::to_string(c.z) + ")";
}

std::string to_string(IntensityKind kind) {
  switch (kind) {
    case IntensityKind::HU: return "HU";
    case IntensityKind::Normalized: return "normalized";
    case IntensityKind::Arbitrary: return "arbitrary";
  }
  return "arbitrary";
}

IntensityKind parse_intensity_kind(const std::string& s) {
  if (s == "HU") return IntensityKind::HU;
  if (s == "normalized") return IntensityKind::Normalized;
  if (s == "arbitrary") return IntensityKind::Arbitrary;
  throw FormatError("unknown intensity kind '" + s + "'");
}

namespace {

void check_kind_range(IntensityKind kind, std::span<const float> data) {
  if (kind != IntensityKind::Normalized) return;
  for (float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("normalized volume holds a value outside [0, 1]");
  }
}

}  // namespace

Volume3D::Volume3D(Dims3 dims, VoxelSize voxel_mm, IntensityKind kind, std::vector<float> data)
    : dims_(dims), voxel_mm_(voxel_mm), kind_(kind), data_(std::move(data)) {
  if (!dims_.positive()) throw DataError("volume dims must be positive, got " + to_string(dims_));
  if (data_.size() != dims_.voxels()) {
    throw DataError("volume payload has " + std::to_string(data_.size()) + " values, dims " + to_string(dims_) +
                    " require " + std::to_string(dims_.voxels()));
  }
  for (double s : voxel_mm_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError("voxel sizes must be strictly positive");
  }
  check_kind_range(kind_, data_);
}

Volume3D::Volume3D(Dims3 dims, IntensityKind kind, float fill)
    : Volume3D(dims, VoxelSize{1.0, 1.0, 1.0}, kind, std::vector<float>(dims.voxels(), fill)) {}

Volume3D Volume3D::with_data(std::vector<float> data, IntensityKind kind) const {
  return Volume3D(dims_, voxel_mm_, kind, std::move(data));
}

BinaryMask3D::BinaryMask3D(Dims3 dims, bool fill) : dims_(dims), data_(dims.voxels(), fill ? 1 : 0) {
  if (!dims_.positive()) throw DataError("mask dims must be positive, got " + to_string(dims_));
}

BinaryMask3D::BinaryMask3D(Dims3 dims, std::vector<std::uint8_t> data) : dims_(dims), data_(std::move(data)) {
  if (!dims_.positive()) throw DataError("mask dims must be positive, got " + to_string(dims_));
  if (data_.size() != dims_.voxels()) throw DataError("mask payload size does not match dims " + to_string(dims_));
  for (auto v : data_) {
    if (v > 1) throw DataError("mask values must be 0 or 1");
  }
}

std::size_t BinaryMask3D::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

NormalizedVolume minmax_normalize(const Volume3D& v) {
  auto data = v.data();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (float x : data) {
    if (!std::isfinite(x)) throw DataError("cannot normalize a volume containing non-finite values");
    lo = std::min<double>(lo, x);
    hi = std::max<double>(hi, x);
  }
  NormalizationRecord rec{lo, hi, v.kind()};
  std::vector<float> out(data.size(), 0.0f);
  if (hi > lo) {
    const double span = hi - lo;
    for (std::size_t i = 0; i < data.size(); ++i) {
      out[i] = static_cast<float>(std::clamp((static_cast<double>(data[i]) - lo) / span, 0.0, 1.0));
    }
  } else {
    rec.vmax = lo + 1.0;
  }
  return {v.with_data(std::move(out), IntensityKind::Normalized), rec};
}

Volume3D normalize_with(const Volume3D& v, const NormalizationRecord& rec) {
  if (!(rec.vmax > rec.vmin)) throw ConfigError("normalization record needs vmax > vmin");
  const double span = rec.vmax - rec.vmin;
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    if (!std::isfinite(x)) throw DataError("cannot normalize a volume containing non-finite values");
    out[i] = static_cast<float>(std::clamp((x - rec.vmin) / span, 0.0, 1.0));
  }
  return v.with_data(std::move(out), IntensityKind::Normalized);
}

Volume3D denormalize(const Volume3D& v, const NormalizationRecord& rec) {
  if (v.kind() != IntensityKind::Normalized) throw DataError("denormalize expects a normalized volume");
  if (rec.source_kind == IntensityKind::Normalized) throw DataError("normalization record does not describe a source intensity scale");
  if (rec.vmax < rec.vmin) throw DataError("normalization record has vmax < vmin");
  const double span = rec.vmax - rec.vmin;
  const bool hu = rec.source_kind == IntensityKind::HU;
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = static_cast<double>(v[i]) * span + rec.vmin;
    if (hu) x = std::clamp(x, static_cast<double>(kHuFloor), static_cast<double>(kHuCeiling));
    out[i] = static_cast<float>(x);
  }
  return v.with_data(std::move(out), rec.source_kind);
}

NormalizationRecord ct_window_record() { return {kHuFloor, kHuCeiling, IntensityKind::HU}; }

BinaryMask3D threshold_mask(const Volume3D& v, double t) {
  if (v.kind() != IntensityKind::HU) throw DataError("threshold_mask expects an HU volume");
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) > t ? 1 : 0;
  return BinaryMask3D(v.dims(), std::move(out));
}

// ---------------------------------------------------------------------------
// CVF v1

namespace {

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

struct CvfHeader {
  Dims3 dims;
  VoxelSize voxel_mm{1.0, 1.0, 1.0};
  IntensityKind kind = IntensityKind::Arbitrary;
  std::filesystem::path payload;
};

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

void write_cvf(const CvfHeader& h, std::span<const float> values, const std::filesystem::path& header_path) {
  const auto payload_name = header_path.stem().string() + ".raw";
  const auto payload_path = header_path.parent_path() / payload_name;
  {
    std::ofstream raw(payload_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw DataError("cannot open '" + payload_path.string() + "' for writing");
    std::vector<std::uint32_t> words(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
    raw.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    if (!raw) throw DataError("failed writing payload '" + payload_path.string() + "'");
  }
  std::ofstream hdr(header_path, std::ios::trunc);
  if (!hdr) throw DataError("cannot open '" + header_path.string() + "' for writing");
  hdr << "cvf_version: 1\n";
  hdr << "dims: " << h.dims.x << ' ' << h.dims.y << ' ' << h.dims.z << '\n';
  hdr << "voxel_mm: " << format_real(h.voxel_mm[0]) << ' ' << format_real(h.voxel_mm[1]) << ' '
      << format_real(h.voxel_mm[2]) << '\n';
  hdr << "kind: " << to_string(h.kind) << '\n';
  hdr << "payload: " << payload_name << '\n';
  if (!hdr) throw DataError("failed writing header '" + header_path.string() + "'");
}

std::pair<CvfHeader, std::vector<float>> read_cvf(const std::filesystem::path& header_path) {
  std::ifstream hdr(header_path);
  if (!hdr) throw FormatError("cannot open CVF header '" + header_path.string() + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(hdr, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw FormatError("malformed CVF header line '" + line + "'");
    auto value = line.substr(colon + 1);
    value.erase(0, value.find_first_not_of(' '));
    kv[line.substr(0, colon)] = value;
  }
  for (const char* key : {"cvf_version", "dims", "voxel_mm", "kind", "payload"}) {
    if (!kv.contains(key)) throw FormatError(std::string("CVF header missing key '") + key + "'");
  }
  if (kv["cvf_version"] != "1") throw FormatError("unsupported CVF version '" + kv["cvf_version"] + "'");

  CvfHeader h;
  {
    std::istringstream is(kv["dims"]);
    if (!(is >> h.dims.x >> h.dims.y >> h.dims.z) || !h.dims.positive()) throw FormatError("bad CVF dims '" + kv["dims"] + "'");
  }
  {
    std::istringstream is(kv["voxel_mm"]);
    if (!(is >> h.voxel_mm[0] >> h.voxel_mm[1] >> h.voxel_mm[2])) throw FormatError("bad CVF voxel_mm '" + kv["voxel_mm"] + "'");
  }
  h.kind = parse_intensity_kind(kv["kind"]);
  h.payload = header_path.parent_path() / kv["payload"];

  std::ifstream raw(h.payload, std::ios::binary | std::ios::ate);
  if (!raw) throw FormatError("cannot open CVF payload '" + h.payload.string() + "'");
  const auto bytes = static_cast<std::size_t>(raw.tellg());
  const std::size_t expected = h.dims.voxels() * 4;
  if (bytes != expected) {
    throw FormatError("CVF payload '" + h.payload.string() + "' has " + std::to_string(bytes) + " bytes, header dims " +
                      to_string(h.dims) + " require " + std::to_string(expected));
  }
  raw.seekg(0);
  std::vector<std::uint32_t> words(h.dims.voxels());
  raw.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(expected));
  if (!raw) throw FormatError("short read on CVF payload '" + h.payload.string() + "'");
  std::vector<float> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) values[i] = std::bit_cast<float>(to_little_endian(words[i]));
  return {h, std::move(values)};
}

}  // namespace

void save_volume(const Volume3D& v, const std::filesystem::path& header_path) {
  write_cvf({v.dims(), v.voxel_mm(), v.kind(), {}}, v.data(), header_path);
}

Volume3D load_volume(const std::filesystem::path& header_path) {
  auto [h, values] = read_cvf(header_path);
  try {
    return Volume3D(h.dims, h.voxel_mm, h.kind, std::move(values));
  } catch (const DataError& e) {
    throw FormatError(std::string("invalid CVF volume: ") + e.what());
  }
}

void save_mask(const BinaryMask3D& m, const std::filesystem::path& header_path) {
  std::vector<float> values(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) values[i] = m[i] ? 1.0f : 0.0f;
  write_cvf({m.dims(), {1.0, 1.0, 1.0}, IntensityKind::Arbitrary, {}}, values, header_path);
}

BinaryMask3D load_mask(const std::filesystem::path& header_path) {
  auto [h, values] = read_cvf(header_path);
  std::vector<std::uint8_t> bits(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == 0.0f) {
      bits[i] = 0;
    } else if (values[i] == 1.0f) {
      bits[i] = 1;
    } else {
      throw FormatError("mask file '" + header_path.string() + "' holds a value other than 0 or 1");
    }
  }
  return BinaryMask3D(h.dims, std::move(bits));
}

}  // namespace mtsct
