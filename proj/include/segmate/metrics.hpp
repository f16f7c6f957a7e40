#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "segmate/tensor.hpp"
#include "segmate/volume.hpp"

namespace segmate {

// Reconstructed 3D prediction: integer labels plus physical spacing.
struct PredictionVolume {
  int z = 0, h = 0, w = 0;
  std::vector<std::uint8_t> labels;
  int num_classes = 0;
  double sz = 1.0, sy = 1.0, sx = 1.0;

  std::uint8_t at(int zi, int yi, int xi) const {
    return labels[(static_cast<std::size_t>(zi) * h + yi) * w + xi];
  }
};

namespace metrics {

// Per-slice argmax over K, stacked in z order. When presence gating is on,
// classes whose sigmoid(presence) falls below the threshold are masked to
// background before the argmax.
template <typename T>
PredictionVolume reconstruct_volume(const std::vector<Tensor<T>>& slice_logits,
                                    const std::vector<Tensor<T>>& presence = {},
                                    std::optional<T> gate_threshold = std::nullopt,
                                    double sz = 1.0, double sy = 1.0, double sx = 1.0) {
  if (slice_logits.empty()) fail(ErrorKind::Data, "reconstruct_volume: no slices");
  const Shape s0 = slice_logits[0].shape();
  check_shape(s0.size() == 3, "slice logits must be K,H,W");
  if (gate_threshold && presence.size() != slice_logits.size())
    fail(ErrorKind::Data, "presence gating requires one presence vector per slice");
  PredictionVolume pv;
  pv.z = static_cast<int>(slice_logits.size());
  pv.num_classes = s0[0];
  pv.h = s0[1];
  pv.w = s0[2];
  pv.sz = sz;
  pv.sy = sy;
  pv.sx = sx;
  pv.labels.resize(static_cast<std::size_t>(pv.z) * pv.h * pv.w);

  const int k = pv.num_classes;
  const std::size_t plane = static_cast<std::size_t>(pv.h) * pv.w;
  for (int t = 0; t < pv.z; ++t) {
    const auto& sl = slice_logits[static_cast<std::size_t>(t)];
    if (sl.shape() != s0)
      fail(ErrorKind::Data, "inconsistent slice shapes: " + shape_str(sl.shape()) + " vs " +
                                shape_str(s0) + " at slice " + std::to_string(t));
    std::vector<char> gated(static_cast<std::size_t>(k), 0);
    if (gate_threshold) {
      const auto& pr = presence[static_cast<std::size_t>(t)];
      check_shape(pr.numel() == k, "presence vector length mismatch");
      for (int c = 1; c < k; ++c) {
        const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(pr.data()[c])));
        if (sig < static_cast<double>(*gate_threshold)) gated[static_cast<std::size_t>(c)] = 1;
      }
    }
    const T* lp = sl.data().data();
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      T bv = lp[p];
      for (int c = 1; c < k; ++c) {
        if (gated[static_cast<std::size_t>(c)]) continue;
        const T v = lp[static_cast<std::size_t>(c) * plane + p];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      pv.labels[static_cast<std::size_t>(t) * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return pv;
}

namespace detail {

inline void check_same_grid(int az, int ah, int aw, int bz, int bh, int bw) {
  if (az != bz || ah != bh || aw != bw)
    fail(ErrorKind::Data, "grid mismatch: " + std::to_string(az) + "x" + std::to_string(ah) +
                              "x" + std::to_string(aw) + " vs " + std::to_string(bz) + "x" +
                              std::to_string(bh) + "x" + std::to_string(bw));
}

// boundary voxels of {labels == k}: inside the mask with some 6-neighbor
// outside (out-of-grid counts as outside)
inline std::vector<std::uint8_t> surface_mask(const std::uint8_t* labels, int z, int h, int w,
                                              int k) {
  std::vector<std::uint8_t> surf(static_cast<std::size_t>(z) * h * w, 0);
  auto in_mask = [&](int zi, int yi, int xi) {
    if (zi < 0 || zi >= z || yi < 0 || yi >= h || xi < 0 || xi >= w) return false;
    return labels[(static_cast<std::size_t>(zi) * h + yi) * w + xi] == k;
  };
  for (int zi = 0; zi < z; ++zi)
    for (int yi = 0; yi < h; ++yi)
      for (int xi = 0; xi < w; ++xi) {
        if (!in_mask(zi, yi, xi)) continue;
        if (!in_mask(zi - 1, yi, xi) || !in_mask(zi + 1, yi, xi) || !in_mask(zi, yi - 1, xi) ||
            !in_mask(zi, yi + 1, xi) || !in_mask(zi, yi, xi - 1) || !in_mask(zi, yi, xi + 1))
          surf[(static_cast<std::size_t>(zi) * h + yi) * w + xi] = 1;
      }
  return surf;
}

// Felzenszwalb lower-envelope distance transform along one axis with
// physical sample coordinates q_i = i * spacing. Infinite entries (no seed
// reachable yet) never enter the envelope; a line with no finite entry stays
// all-infinite.
inline void dt_1d(std::vector<double>& f, double spacing, std::vector<double>& scratch_d,
                  std::vector<int>& scratch_v, std::vector<double>& scratch_z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  auto q = [spacing](int i) { return i * spacing; };
  std::vector<int>& v = scratch_v;
  std::vector<double>& zb = scratch_z;
  std::vector<double>& d = scratch_d;
  v.assign(static_cast<std::size_t>(n), 0);
  zb.assign(static_cast<std::size_t>(n) + 1, 0.0);
  d.assign(static_cast<std::size_t>(n), inf);
  int kk = -1;
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(f[static_cast<std::size_t>(i)])) continue;
    double s = 0.0;
    while (kk >= 0) {
      const int j = v[static_cast<std::size_t>(kk)];
      s = ((f[static_cast<std::size_t>(i)] + q(i) * q(i)) -
           (f[static_cast<std::size_t>(j)] + q(j) * q(j))) /
          (2 * q(i) - 2 * q(j));
      if (s <= zb[static_cast<std::size_t>(kk)])
        --kk;
      else
        break;
    }
    if (kk < 0) {
      kk = 0;
      v[0] = i;
      zb[0] = -inf;
      zb[1] = inf;
    } else {
      ++kk;
      v[static_cast<std::size_t>(kk)] = i;
      zb[static_cast<std::size_t>(kk)] = s;
      zb[static_cast<std::size_t>(kk) + 1] = inf;
    }
  }
  if (kk >= 0) {
    int idx = 0;
    for (int i = 0; i < n; ++i) {
      while (zb[static_cast<std::size_t>(idx) + 1] < q(i)) ++idx;
      const int j = v[static_cast<std::size_t>(idx)];
      const double dq = q(i) - q(j);
      d[static_cast<std::size_t>(i)] = dq * dq + f[static_cast<std::size_t>(j)];
    }
  }
  std::copy(d.begin(), d.end(), f.begin());
}

// exact squared Euclidean distance (in mm) to the seed set over the grid
inline std::vector<double> edt_sq(const std::vector<std::uint8_t>& seeds, int z, int h, int w,
                                  double sz, double sy, double sx) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) d[i] = seeds[i] ? 0.0 : inf;
  std::vector<double> line, sd, szz;
  std::vector<int> sv;
  // x axis
  line.resize(static_cast<std::size_t>(w));
  for (int zi = 0; zi < z; ++zi)
    for (int yi = 0; yi < h; ++yi) {
      double* row = d.data() + (static_cast<std::size_t>(zi) * h + yi) * w;
      std::copy(row, row + w, line.begin());
      dt_1d(line, sx, sd, sv, szz);
      std::copy(line.begin(), line.end(), row);
    }
  // y axis
  line.resize(static_cast<std::size_t>(h));
  for (int zi = 0; zi < z; ++zi)
    for (int xi = 0; xi < w; ++xi) {
      for (int yi = 0; yi < h; ++yi)
        line[static_cast<std::size_t>(yi)] = d[(static_cast<std::size_t>(zi) * h + yi) * w + xi];
      dt_1d(line, sy, sd, sv, szz);
      for (int yi = 0; yi < h; ++yi)
        d[(static_cast<std::size_t>(zi) * h + yi) * w + xi] = line[static_cast<std::size_t>(yi)];
    }
  // z axis
  line.resize(static_cast<std::size_t>(z));
  for (int yi = 0; yi < h; ++yi)
    for (int xi = 0; xi < w; ++xi) {
      for (int zi = 0; zi < z; ++zi)
        line[static_cast<std::size_t>(zi)] = d[(static_cast<std::size_t>(zi) * h + yi) * w + xi];
      dt_1d(line, sz, sd, sv, szz);
      for (int zi = 0; zi < z; ++zi)
        d[(static_cast<std::size_t>(zi) * h + yi) * w + xi] = line[static_cast<std::size_t>(zi)];
    }
  return d;
}

inline double percentile_95(std::vector<double>& pool) {
  std::sort(pool.begin(), pool.end());
  const double idx = 0.95 * static_cast<double>(pool.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, pool.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return pool[lo] * (1.0 - frac) + pool[hi] * frac;
}

}  // namespace detail

// 2|P∩G| / (|P|+|G|); 1 when both empty, 0 when exactly one is
inline double dice_3d(const PredictionVolume& pred, const MaskVolume& gt, int k) {
  detail::check_same_grid(pred.z, pred.h, pred.w, gt.z, gt.h, gt.w);
  std::int64_t np = 0, ng = 0, ni = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == k, g = gt.labels[i] == k;
    np += p;
    ng += g;
    ni += p && g;
  }
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
}

// 95th percentile of the pooled symmetric surface distances in mm.
// Undefined (nullopt) when either mask is empty for class k.
inline std::optional<double> hd95(const PredictionVolume& pred, const MaskVolume& gt, int k) {
  detail::check_same_grid(pred.z, pred.h, pred.w, gt.z, gt.h, gt.w);
  auto sp = detail::surface_mask(pred.labels.data(), pred.z, pred.h, pred.w, k);
  auto sg = detail::surface_mask(gt.labels.data(), gt.z, gt.h, gt.w, k);
  std::int64_t cp = 0, cg = 0;
  for (auto v : sp) cp += v;
  for (auto v : sg) cg += v;
  if (cp == 0 || cg == 0) return std::nullopt;

  auto d_to_g = detail::edt_sq(sg, pred.z, pred.h, pred.w, pred.sz, pred.sy, pred.sx);
  auto d_to_p = detail::edt_sq(sp, pred.z, pred.h, pred.w, pred.sz, pred.sy, pred.sx);
  std::vector<double> pool;
  pool.reserve(static_cast<std::size_t>(cp + cg));
  for (std::size_t i = 0; i < sp.size(); ++i)
    if (sp[i]) pool.push_back(std::sqrt(d_to_g[i]));
  for (std::size_t i = 0; i < sg.size(); ++i)
    if (sg[i]) pool.push_back(std::sqrt(d_to_p[i]));
  return detail::percentile_95(pool);
}

// ----- per-case evaluation ---------------------------------------------------

struct ClassMetrics {
  int class_id = 0;
  std::string name;
  double dice = 0.0;
  std::optional<double> hd95_mm;
};

struct CaseReport {
  std::vector<ClassMetrics> per_class;  // foreground classes only
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;  // over defined entries
  int undefined_hd95 = 0;

  std::string table() const {
    std::ostringstream os;
    os << "class              dice     hd95_mm\n";
    for (const auto& c : per_class) {
      char buf[96];
      if (c.hd95_mm)
        std::snprintf(buf, sizeof buf, "%-16s %7.4f %11.4f\n", c.name.c_str(), c.dice,
                      *c.hd95_mm);
      else
        std::snprintf(buf, sizeof buf, "%-16s %7.4f %11s\n", c.name.c_str(), c.dice, "n/a");
      os << buf;
    }
    char buf[96];
    if (mean_hd95)
      std::snprintf(buf, sizeof buf, "%-16s %7.4f %11.4f\n", "mean", mean_dice, *mean_hd95);
    else
      std::snprintf(buf, sizeof buf, "%-16s %7.4f %11s\n", "mean", mean_dice, "n/a");
    os << buf;
    return os.str();
  }

  void write_kv(std::ostream& os) const {
    for (const auto& c : per_class) {
      os << "dice." << c.name << "=" << c.dice << "\n";
      if (c.hd95_mm) os << "hd95." << c.name << "=" << *c.hd95_mm << "\n";
    }
    os << "mean_dice=" << mean_dice << "\n";
    if (mean_hd95) os << "mean_hd95=" << *mean_hd95 << "\n";
    os << "undefined_hd95=" << undefined_hd95 << "\n";
  }
};

inline CaseReport evaluate_case(const PredictionVolume& pred, const MaskVolume& gt,
                                const std::vector<std::string>& class_names = {}) {
  detail::check_same_grid(pred.z, pred.h, pred.w, gt.z, gt.h, gt.w);
  const int k = gt.num_classes;
  CaseReport r;
  double dice_sum = 0.0, hd_sum = 0.0;
  int hd_n = 0;
  for (int c = 1; c < k; ++c) {
    ClassMetrics m;
    m.class_id = c;
    m.name = static_cast<std::size_t>(c) < class_names.size()
                 ? class_names[static_cast<std::size_t>(c)]
                 : "class" + std::to_string(c);
    m.dice = dice_3d(pred, gt, c);
    m.hd95_mm = hd95(pred, gt, c);
    dice_sum += m.dice;
    if (m.hd95_mm) {
      hd_sum += *m.hd95_mm;
      ++hd_n;
    } else {
      ++r.undefined_hd95;
    }
    r.per_class.push_back(std::move(m));
  }
  r.mean_dice = k > 1 ? dice_sum / (k - 1) : 0.0;
  if (hd_n > 0) r.mean_hd95 = hd_sum / hd_n;
  return r;
}

}  // namespace metrics
}  // namespace segmate
