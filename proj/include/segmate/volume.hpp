#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segmate/tensor.hpp"

namespace segmate {

// Raw CT volume: signed 16-bit HU voxels, Z x H x W, physical spacing in mm.
struct Volume {
  int z = 0, h = 0, w = 0;
  std::vector<std::int16_t> voxels;
  double sz = 1.0, sy = 1.0, sx = 1.0;
  std::string patient_id;

  std::int16_t at(int zi, int yi, int xi) const {
    return voxels[(static_cast<std::size_t>(zi) * h + yi) * w + xi];
  }
};

// Integer label grid aligned to a Volume.
struct MaskVolume {
  int z = 0, h = 0, w = 0;
  std::vector<std::uint8_t> labels;
  int num_classes = 0;
  double sz = 1.0, sy = 1.0, sx = 1.0;

  std::uint8_t at(int zi, int yi, int xi) const {
    return labels[(static_cast<std::size_t>(zi) * h + yi) * w + xi];
  }
};

// One training sample: normalized 3-slice stack, labels, slice position.
struct SliceSample {
  Tensor<float> stack;                // 3,H,W in [0,1]
  std::vector<std::uint8_t> target;   // H*W labels; empty for inference samples
  float z_norm = 0.0f;
};

namespace data {

// clamp to [-1000, 2000] HU then map linearly onto [0,1]
inline float clip_normalize(std::int16_t hu) {
  const int c = std::clamp(static_cast<int>(hu), -1000, 2000);
  return static_cast<float>(c + 1000) / 3000.0f;
}

// bilinear, align_corners=false; used for image slices
inline std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w, int oh,
                                          int ow) {
  if (oh < 1 || ow < 1) fail(ErrorKind::Shape, "resize target must be >= 1x1");
  if (oh == h && ow == w) return src;
  std::vector<float> dst(static_cast<std::size_t>(oh) * ow);
  const double scale_y = static_cast<double>(h) / oh;
  const double scale_x = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const double sy = (y + 0.5) * scale_y - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = std::clamp(sy - std::floor(sy), 0.0, 1.0);
    for (int x = 0; x < ow; ++x) {
      const double sx = (x + 0.5) * scale_x - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = std::clamp(sx - std::floor(sx), 0.0, 1.0);
      const double top = (1.0 - wx) * src[static_cast<std::size_t>(y0) * w + x0] +
                         wx * src[static_cast<std::size_t>(y0) * w + x1];
      const double bot = (1.0 - wx) * src[static_cast<std::size_t>(y1) * w + x0] +
                         wx * src[static_cast<std::size_t>(y1) * w + x1];
      dst[static_cast<std::size_t>(y) * ow + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
    }
  }
  return dst;
}

// nearest neighbor; used for label masks (bit-exact identity at same size)
inline std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& src, int h,
                                                int w, int oh, int ow) {
  if (oh < 1 || ow < 1) fail(ErrorKind::Shape, "resize target must be >= 1x1");
  if (oh == h && ow == w) return src;
  std::vector<std::uint8_t> dst(static_cast<std::size_t>(oh) * ow);
  const double scale_y = static_cast<double>(h) / oh;
  const double scale_x = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * scale_y), h - 1);
    for (int x = 0; x < ow; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * scale_x), w - 1);
      dst[static_cast<std::size_t>(y) * ow + x] = src[static_cast<std::size_t>(sy) * w + sx];
    }
  }
  return dst;
}

// (t-1, t, t+1) stack with replicate clamping at the volume ends;
// z_norm = t/(Z-1), or 0 for single-slice volumes
inline SliceSample make_triplet(const Volume& vol, int t) {
  if (t < 0 || t >= vol.z)
    fail(ErrorKind::Range, "slice index " + std::to_string(t) + " outside volume of depth " +
                               std::to_string(vol.z));
  SliceSample s;
  s.z_norm = vol.z > 1 ? static_cast<float>(t) / static_cast<float>(vol.z - 1) : 0.0f;
  s.stack = Tensor<float>({3, vol.h, vol.w});
  auto d = s.stack.data();
  const std::size_t plane = static_cast<std::size_t>(vol.h) * vol.w;
  const int zs[3] = {std::max(0, t - 1), t, std::min(vol.z - 1, t + 1)};
  for (int c = 0; c < 3; ++c) {
    const std::int16_t* src = vol.voxels.data() + static_cast<std::size_t>(zs[c]) * plane;
    for (std::size_t p = 0; p < plane; ++p) d[c * plane + p] = clip_normalize(src[p]);
  }
  return s;
}

// ----- synthetic phantoms ----------------------------------------------------

struct PhantomCase {
  Volume vol;
  MaskVolume mask;
};

struct PhantomSpec {
  int z = 24, h = 48, w = 48;
  int num_classes = 4;  // background + K-1 ellipsoid organs
  double sz = 1.5, sy = 1.0, sx = 1.0;
};

// Desk-scale surrogate volumes: K-1 non-overlapping axis-aligned ellipsoids
// with distinct HU bands over a noisy soft-tissue background. The mask is the
// exact ellipsoid occupancy; generation is deterministic per seed.
inline std::vector<PhantomCase> phantom_generate(std::uint64_t seed, int n_volumes,
                                                 PhantomSpec spec = {}) {
  if (spec.num_classes < 2) fail(ErrorKind::Config, "phantom needs num_classes >= 2");
  if (spec.z < 1 || spec.h < 8 || spec.w < 8)
    fail(ErrorKind::Config, "phantom grid too small");
  static const int hu_bands[] = {40, 700, -900, 300, -500, 150, -200};
  Rng rng(seed);
  std::vector<PhantomCase> out;
  out.reserve(static_cast<std::size_t>(std::max(0, n_volumes)));

  for (int vi = 0; vi < n_volumes; ++vi) {
    PhantomCase c;
    c.vol.z = spec.z;
    c.vol.h = spec.h;
    c.vol.w = spec.w;
    c.vol.sz = spec.sz;
    c.vol.sy = spec.sy;
    c.vol.sx = spec.sx;
    c.vol.patient_id = "phantom_" + std::to_string(seed) + "_" + std::to_string(vi);
    c.vol.voxels.resize(static_cast<std::size_t>(spec.z) * spec.h * spec.w);
    c.mask.z = spec.z;
    c.mask.h = spec.h;
    c.mask.w = spec.w;
    c.mask.num_classes = spec.num_classes;
    c.mask.sz = spec.sz;
    c.mask.sy = spec.sy;
    c.mask.sx = spec.sx;
    c.mask.labels.assign(c.vol.voxels.size(), 0);

    for (auto& v : c.vol.voxels)
      v = static_cast<std::int16_t>(std::clamp(rng.normal(-150.0, 25.0), -1024.0, 2000.0));

    for (int k = 1; k < spec.num_classes; ++k) {
      const int band = hu_bands[(k - 1) % 7];
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const double rz = rng.uniform(0.15, 0.32) * spec.z;
        const double ry = rng.uniform(0.10, 0.24) * spec.h;
        const double rx = rng.uniform(0.10, 0.24) * spec.w;
        const double cz = rng.uniform(rz, spec.z - rz);
        const double cy = rng.uniform(ry + 1, spec.h - ry - 1);
        const double cx = rng.uniform(rx + 1, spec.w - rx - 1);
        bool clash = false;
        for (int zi = 0; zi < spec.z && !clash; ++zi)
          for (int yi = 0; yi < spec.h && !clash; ++yi)
            for (int xi = 0; xi < spec.w && !clash; ++xi) {
              const double dz = (zi - cz) / rz, dy = (yi - cy) / ry, dx = (xi - cx) / rx;
              if (dz * dz + dy * dy + dx * dx <= 1.0 && c.mask.at(zi, yi, xi) != 0) clash = true;
            }
        if (clash) continue;
        for (int zi = 0; zi < spec.z; ++zi)
          for (int yi = 0; yi < spec.h; ++yi)
            for (int xi = 0; xi < spec.w; ++xi) {
              const double dz = (zi - cz) / rz, dy = (yi - cy) / ry, dx = (xi - cx) / rx;
              if (dz * dz + dy * dy + dx * dx <= 1.0) {
                const std::size_t idx = (static_cast<std::size_t>(zi) * spec.h + yi) * spec.w + xi;
                c.mask.labels[idx] = static_cast<std::uint8_t>(k);
                c.vol.voxels[idx] = static_cast<std::int16_t>(
                    std::clamp(band + rng.normal(0.0, 20.0), -1024.0, 2000.0));
              }
            }
        placed = true;
      }
      if (!placed)
        fail(ErrorKind::Generation, "could not place ellipsoid for class " + std::to_string(k) +
                                        " after 100 attempts");
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace data
}  // namespace segmate
