#include "mtsct/morphology.hpp"

#include <cstdlib>

namespace mtsct {

std::vector<Coord3> StructuringElement::offsets() const {
  std::vector<Coord3> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        const bool keep = connectivity == Connectivity::Vertex26 ||
                          (connectivity == Connectivity::Edge18 && manhattan <= 2) || manhattan == 1;
        if (keep) out.push_back({dx, dy, dz});
      }
  return out;
}

namespace {

BinaryMask3D dilate_once(const BinaryMask3D& in, const std::vector<Coord3>& offsets) {
  const Dims3 d = in.dims();
  BinaryMask3D out = in;
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        if (!in.at(x, y, z)) continue;
        for (const auto& o : offsets) {
          const int nx = x + o.x, ny = y + o.y, nz = z + o.z;
          if (nx < 0 || ny < 0 || nz < 0 || nx >= d.x || ny >= d.y || nz >= d.z) continue;
          out.set(nx, ny, nz, true);
        }
      }
  return out;
}

}  // namespace

BinaryMask3D binary_dilate(const BinaryMask3D& mask, StructuringElement element, int iterations) {
  if (iterations < 0) throw ConfigError("dilation iterations must be non-negative");
  const auto offsets = element.offsets();
  BinaryMask3D out = mask;
  for (int i = 0; i < iterations; ++i) out = dilate_once(out, offsets);
  return out;
}

AttentionRegion attention_region(const PatchArray& seg_prob, double binarize_threshold, int iterations,
                                 RegionSource source) {
  std::vector<std::uint8_t> bits(seg_prob.values.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = seg_prob.values[i] > binarize_threshold ? 1 : 0;
  BinaryMask3D seed(seg_prob.size, std::move(bits));
  return {binary_dilate(seed, {}, iterations), source, iterations};
}

BinaryMask3D group_mean_template(std::span<const BinaryMask3D> ct_skull_masks) {
  if (ct_skull_masks.empty()) throw ConfigError("group_mean_template needs at least one mask");
  const Dims3 d = ct_skull_masks.front().dims();
  std::vector<std::uint32_t> hits(d.voxels(), 0);
  for (const auto& m : ct_skull_masks) {
    if (!(m.dims() == d)) throw DataError("template masks differ in dims");
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += m[i] ? 1 : 0;
  }
  const double n = static_cast<double>(ct_skull_masks.size());
  std::vector<std::uint8_t> bits(hits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = hits[i] / n > 0.5 ? 1 : 0;
  return binary_dilate(BinaryMask3D(d, std::move(bits)), {}, 1);
}

PostprocessedSct postprocess_single_task(const Volume3D& sct, const BinaryMask3D& template_mask, double hu_threshold) {
  if (!(sct.dims() == template_mask.dims())) throw DataError("sCT and template dims differ");
  std::vector<float> out(sct.data().begin(), sct.data().end());
  BinaryMask3D skull(sct.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!template_mask[i]) {
      out[i] = kHuFloor;
    } else if (static_cast<double>(out[i]) > hu_threshold) {
      skull.set(i, true);
    }
  }
  return {sct.with_data(std::move(out), sct.kind()), std::move(skull)};
}

}  // namespace mtsct
