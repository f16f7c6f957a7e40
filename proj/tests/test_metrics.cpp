#include <doctest.h>

#include "test_util.hpp"

using namespace segmate;
using namespace segmate::metrics;

namespace {

PredictionVolume make_pred(int z, int h, int w, std::vector<std::uint8_t> labels, int k,
                           double sz = 1.0, double sy = 1.0, double sx = 1.0) {
  PredictionVolume p;
  p.z = z;
  p.h = h;
  p.w = w;
  p.labels = std::move(labels);
  p.num_classes = k;
  p.sz = sz;
  p.sy = sy;
  p.sx = sx;
  return p;
}

MaskVolume make_mask(int z, int h, int w, std::vector<std::uint8_t> labels, int k,
                     double sz = 1.0, double sy = 1.0, double sx = 1.0) {
  MaskVolume m;
  m.z = z;
  m.h = h;
  m.w = w;
  m.labels = std::move(labels);
  m.num_classes = k;
  m.sz = sz;
  m.sy = sy;
  m.sx = sx;
  return m;
}

// O(n^2) brute-force HD95: pooled symmetric directed distances, linear
// interpolation percentile; written independently of the EDT path
std::optional<double> hd95_oracle(const PredictionVolume& a, const MaskVolume& b, int k) {
  auto surface = [&](const std::uint8_t* lab, int z, int h, int w) {
    std::vector<std::array<int, 3>> pts;
    auto in = [&](int zi, int yi, int xi) {
      if (zi < 0 || zi >= z || yi < 0 || yi >= h || xi < 0 || xi >= w) return false;
      return lab[(static_cast<std::size_t>(zi) * h + yi) * w + xi] == k;
    };
    for (int zi = 0; zi < z; ++zi)
      for (int yi = 0; yi < h; ++yi)
        for (int xi = 0; xi < w; ++xi)
          if (in(zi, yi, xi) &&
              (!in(zi - 1, yi, xi) || !in(zi + 1, yi, xi) || !in(zi, yi - 1, xi) ||
               !in(zi, yi + 1, xi) || !in(zi, yi, xi - 1) || !in(zi, yi, xi + 1)))
            pts.push_back({zi, yi, xi});
    return pts;
  };
  auto pa = surface(a.labels.data(), a.z, a.h, a.w);
  auto pb = surface(b.labels.data(), b.z, b.h, b.w);
  if (pa.empty() || pb.empty()) return std::nullopt;
  auto directed = [&](const std::vector<std::array<int, 3>>& from,
                      const std::vector<std::array<int, 3>>& to, std::vector<double>& pool) {
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dz = (p[0] - q[0]) * a.sz;
        const double dy = (p[1] - q[1]) * a.sy;
        const double dx = (p[2] - q[2]) * a.sx;
        best = std::min(best, dz * dz + dy * dy + dx * dx);
      }
      pool.push_back(std::sqrt(best));
    }
  };
  std::vector<double> pool;
  directed(pa, pb, pool);
  directed(pb, pa, pool);
  std::sort(pool.begin(), pool.end());
  const double idx = 0.95 * static_cast<double>(pool.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, pool.size() - 1);
  return pool[lo] * (1.0 - (idx - lo)) + pool[hi] * (idx - lo);
}

std::vector<std::uint8_t> random_grid(int n, int k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<std::uint8_t>(rng.uniform_int(0, k - 1));
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("reconstruct_volume basics") {
  Tensor<float> logits({3, 2, 2});
  for (int p = 0; p < 4; ++p) logits.data()[2 * 4 + p] = 5.0f;  // class 2 wins
  auto pv = reconstruct_volume<float>({logits});
  CHECK(pv.z == 1);
  for (auto v : pv.labels) CHECK(v == 2);

  // gating: presence logit -1e6 for class 2 masks it to background
  Tensor<float> pres({3});
  pres.data()[2] = -1e6f;
  auto gated = reconstruct_volume<float>({logits}, {pres}, 0.5f);
  for (auto v : gated.labels) CHECK(v != 2);
}

TEST_CASE("reconstruct_volume matches per-slice argmax and commutes with reordering") {
  std::vector<Tensor<float>> slices;
  Rng rng(3);
  for (int t = 0; t < 4; ++t)
    slices.push_back(Tensor<float>::randn({3, 4, 4}, rng));
  auto pv = reconstruct_volume<float>(slices);
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 16; ++p) {
      int best = 0;
      for (int c = 1; c < 3; ++c)
        if (slices[t].data()[c * 16 + p] > slices[t].data()[best * 16 + p]) best = c;
      CHECK(pv.labels[t * 16 + p] == best);
    }
  std::vector<Tensor<float>> rev(slices.rbegin(), slices.rend());
  auto pv_rev = reconstruct_volume<float>(rev);
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 16; ++p) CHECK(pv_rev.labels[(3 - t) * 16 + p] == pv.labels[t * 16 + p]);
}

TEST_CASE("reconstruct_volume rejects inconsistent slice shapes") {
  Tensor<float> a({3, 2, 2}), b({3, 2, 3});
  CHECK_THROWS_AS(reconstruct_volume<float>({a, b}), Error);
}

TEST_CASE("dice_3d basics") {
  auto grid = random_grid(8 * 8 * 8, 3, 7);
  auto pred = make_pred(8, 8, 8, grid, 3);
  auto gt = make_mask(8, 8, 8, grid, 3);
  CHECK(dice_3d(pred, gt, 1) == 1.0);
  CHECK(dice_3d(pred, gt, 2) == 1.0);

  // disjoint equal-size regions
  std::vector<std::uint8_t> a(27, 0), b(27, 0);
  a[0] = 1;
  b[1] = 1;
  CHECK(dice_3d(make_pred(3, 3, 3, a, 2), make_mask(3, 3, 3, b, 2), 1) == 0.0);
  // both empty -> 1; one empty -> 0
  std::vector<std::uint8_t> e(27, 0);
  CHECK(dice_3d(make_pred(3, 3, 3, e, 2), make_mask(3, 3, 3, e, 2), 1) == 1.0);
  CHECK(dice_3d(make_pred(3, 3, 3, a, 2), make_mask(3, 3, 3, e, 2), 1) == 0.0);
  CHECK_THROWS_AS(dice_3d(make_pred(2, 3, 3, e, 2), make_mask(3, 3, 3, e, 2), 1), Error);
}

TEST_CASE("dice_3d matches the voxel-count oracle on random volumes") {
  for (int trial = 0; trial < 50; ++trial) {
    auto ga = random_grid(512, 3, 100 + static_cast<std::uint64_t>(trial));
    auto gb = random_grid(512, 3, 200 + static_cast<std::uint64_t>(trial));
    auto pred = make_pred(8, 8, 8, ga, 3);
    auto gt = make_mask(8, 8, 8, gb, 3);
    for (int k = 1; k < 3; ++k) {
      std::int64_t np = 0, ng = 0, ni = 0;
      for (int i = 0; i < 512; ++i) {
        np += ga[i] == k;
        ng += gb[i] == k;
        ni += ga[i] == k && gb[i] == k;
      }
      const double expect = (np + ng) == 0 ? 1.0 : (np == 0 || ng == 0 ? 0.0 : 2.0 * ni / (np + ng));
      CHECK(dice_3d(pred, gt, k) == doctest::Approx(expect).epsilon(1e-12));
      CHECK(dice_3d(pred, gt, k) ==
            doctest::Approx(dice_3d(make_pred(8, 8, 8, gb, 3), make_mask(8, 8, 8, ga, 3), k)));
    }
  }
}

TEST_CASE("hd95 is zero for identical masks") {
  auto grid = random_grid(8 * 8 * 8, 2, 8);
  bool any = false;
  for (auto v : grid) any = any || v == 1;
  REQUIRE(any);
  auto pv = make_pred(8, 8, 8, grid, 2);
  auto mv = make_mask(8, 8, 8, grid, 2);
  auto d = hd95(pv, mv, 1);
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(0.0));
}

TEST_CASE("hd95 of single voxels at z-distance 3 is 3 mm") {
  std::vector<std::uint8_t> a(5 * 3 * 3, 0), b(5 * 3 * 3, 0);
  a[(0 * 3 + 1) * 3 + 1] = 1;
  b[(3 * 3 + 1) * 3 + 1] = 1;
  auto d = hd95(make_pred(5, 3, 3, a, 2), make_mask(5, 3, 3, b, 2), 1);
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(3.0).epsilon(1e-12));
  // anisotropic spacing: same voxels, sz=2.5 -> 7.5 mm
  auto d2 = hd95(make_pred(5, 3, 3, a, 2, 2.5), make_mask(5, 3, 3, b, 2, 2.5), 1);
  CHECK(*d2 == doctest::Approx(7.5).epsilon(1e-12));
}

TEST_CASE("hd95 is undefined when either mask is empty") {
  std::vector<std::uint8_t> a(27, 0), b(27, 0);
  a[0] = 1;
  CHECK_FALSE(hd95(make_pred(3, 3, 3, a, 2), make_mask(3, 3, 3, b, 2), 1).has_value());
  CHECK_FALSE(hd95(make_pred(3, 3, 3, b, 2), make_mask(3, 3, 3, a, 2), 1).has_value());
}

TEST_CASE("hd95 matches the brute-force oracle on random masks") {
  int defined = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto ga = random_grid(512, 2, 300 + static_cast<std::uint64_t>(trial));
    auto gb = random_grid(512, 2, 600 + static_cast<std::uint64_t>(trial));
    const double sz = 0.5 + 0.25 * (trial % 5);
    auto pred = make_pred(8, 8, 8, ga, 2, sz, 1.0, 0.75);
    auto gt = make_mask(8, 8, 8, gb, 2, sz, 1.0, 0.75);
    auto got = hd95(pred, gt, 1);
    auto ref = hd95_oracle(pred, gt, 1);
    REQUIRE(got.has_value() == ref.has_value());
    if (got) {
      CHECK(std::abs(*got - *ref) < 1e-9);
      auto sym = hd95(make_pred(8, 8, 8, gb, 2, sz, 1.0, 0.75),
                      make_mask(8, 8, 8, ga, 2, sz, 1.0, 0.75), 1);
      CHECK(std::abs(*got - *sym) < 1e-9);
      ++defined;
    }
  }
  CHECK(defined > 150);
}

TEST_CASE("evaluate_case aggregates per-class metrics") {
  auto grid = random_grid(8 * 8 * 8, 4, 9);
  auto pred = make_pred(8, 8, 8, grid, 4);
  auto gt = make_mask(8, 8, 8, grid, 4);
  auto rep = evaluate_case(pred, gt, {"bg", "liver", "aorta", "trachea"});
  CHECK(rep.per_class.size() == 3);
  CHECK(rep.mean_dice == doctest::Approx(1.0));
  REQUIRE(rep.mean_hd95.has_value());
  CHECK(*rep.mean_hd95 == doctest::Approx(0.0));
  CHECK(rep.per_class[0].name == "liver");

  // all-background prediction: per-organ dice 0
  std::vector<std::uint8_t> empty(512, 0);
  auto rep0 = evaluate_case(make_pred(8, 8, 8, empty, 4), gt);
  for (const auto& c : rep0.per_class) CHECK(c.dice == 0.0);
  CHECK(rep0.undefined_hd95 == 3);

  // composition: per-class calls agree
  auto gb = random_grid(512, 4, 10);
  auto pred2 = make_pred(8, 8, 8, gb, 4);
  auto rep2 = evaluate_case(pred2, gt);
  for (int k = 1; k < 4; ++k) {
    CHECK(rep2.per_class[k - 1].dice == doctest::Approx(dice_3d(pred2, gt, k)));
    auto h = hd95(pred2, gt, k);
    CHECK(rep2.per_class[k - 1].hd95_mm.has_value() == h.has_value());
    if (h) CHECK(*rep2.per_class[k - 1].hd95_mm == doctest::Approx(*h));
  }
}

TEST_SUITE_END();
