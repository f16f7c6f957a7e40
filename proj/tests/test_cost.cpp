#include <doctest.h>

#include "segmate/cost_model.hpp"
#include "test_util.hpp"

using namespace segmate;
using testutil::random_normal;
using testutil::random_unit;

namespace {

SegMateConfig desk_segmate() { return SegMateConfig::reference(); }

}  // namespace

TEST_SUITE_BEGIN("cost");

TEST_CASE("conv flop formula examples") {
  // 1x1 conv 16->1 on 8x8: 2*64*16 = 2048 MACs-side FLOPs (bias excluded)
  Rng rng(1);
  Network<float>* unused = nullptr;
  (void)unused;
  CostCtx<float> cx;
  auto x = cx.make_input({1, 16, 8, 8});
  auto p = Conv2dParams<float>::make(rng, 1, 16, 1);
  auto y = cx.conv2d("probe", x, p);
  auto rep = cx.report(1);
  const std::uint64_t bias_part = 1ull * 1 * 8 * 8;
  CHECK(rep.total_flops - bias_part == 2048);
  CHECK(y.shape == Shape{1, 1, 8, 8});
}

TEST_CASE("3x3 conv 3->16 on 8x8 pad 1 with bias counts 56320") {
  Rng rng(2);
  CostCtx<float> cx;
  auto x = cx.make_input({1, 3, 8, 8});
  auto p = Conv2dParams<float>::make(rng, 16, 3, 3, 1, 1);
  cx.conv2d("probe", x, p);
  CHECK(cx.report(1).total_flops == 56320);
}

TEST_CASE("an empty graph reports zero cost") {
  CostCtx<float> cx;
  cx.make_input({1, 3, 8, 8});
  auto rep = cx.report(1);
  CHECK(rep.total_flops == 0);
  CHECK(rep.total_params == 0);
  CHECK(rep.peak_activation_bytes == 0);
}

TEST_CASE("analytical counts equal instrumented execution for each primitive") {
  Rng rng(3);
  SUBCASE("conv over the kernel/stride/dilation grid") {
    for (int k : {1, 3, 7})
      for (int s : {1, 2})
        for (int d : {1, 2}) {
          const int pad = d * (k - 1) / 2;
          auto x = random_normal({2, 3, 12, 12}, 40);
          auto p = Conv2dParams<float>::make(rng, 4, 3, k, s, pad, d);
          std::uint64_t measured;
          {
            flops::CountScope scope;
            ops::conv2d(x, p.w, p.b, s, pad, d);
            measured = scope.count();
          }
          CostCtx<float> cx;
          auto xv = cx.make_input({2, 3, 12, 12});
          cx.conv2d("c", xv, p);
          CHECK(cx.report(1).total_flops == measured);
        }
  }
  SUBCASE("linear") {
    auto x = random_normal({3, 20}, 41);
    auto p = LinearParams<float>::make(rng, 7, 20);
    std::uint64_t measured;
    {
      flops::CountScope scope;
      ops::linear(x, p.w, p.b);
      measured = scope.count();
    }
    CostCtx<float> cx;
    auto xv = cx.make_input({3, 20});
    cx.linear("l", xv, p);
    CHECK(cx.report(1).total_flops == measured);
  }
  SUBCASE("pooling") {
    auto x = random_normal({2, 5, 12, 12}, 42);
    std::uint64_t gap, gmp;
    {
      flops::CountScope scope;
      ops::global_avg_pool(x);
      gap = scope.count();
    }
    {
      flops::CountScope scope;
      ops::global_max_pool(x);
      gmp = scope.count();
    }
    CHECK(gap == 2ull * 5 * 12 * 12);
    CHECK(gmp == 2ull * 5 * 12 * 12);
    {
      flops::CountScope scope;
      ops::avg_pool2d(x, 2, 2);
      CHECK(scope.count() == 2ull * 5 * 12 * 12);  // k==s: one visit per input
    }
    {
      flops::CountScope scope;
      ops::max_pool2d(x, 3, 1);  // overlapping windows: one visit per window element
      CHECK(scope.count() == 2ull * 5 * 10 * 10 * 9);
    }
  }
  SUBCASE("normalization") {
    auto x = random_normal({2, 5, 9, 9}, 43);
    auto bn = BnParams<float>::make(5);
    std::uint64_t measured;
    {
      flops::CountScope scope;
      ops::batch_norm(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, false);
      measured = scope.count();
    }
    CostCtx<float> cx;
    auto xv = cx.make_input({2, 5, 9, 9});
    cx.batch_norm("bn", xv, bn, false);
    CHECK(cx.report(1).total_flops == measured);
    CHECK(measured == 2ull * 2 * 5 * 9 * 9);
  }
  SUBCASE("activations") {
    auto x = random_normal({2, 5, 9, 9}, 44);
    for (auto* f : {&ops::silu<float>, &ops::relu<float>, &ops::sigmoid<float>}) {
      flops::CountScope scope;
      (*f)(x);
      CHECK(scope.count() == static_cast<std::uint64_t>(x.numel()));
    }
  }
}

TEST_CASE("whole-network analytical count equals instrumented execution") {
  SegMateConfig cfg;
  cfg.encoder_widths = {8, 16, 32};
  cfg.decoder_widths = {16, 8};
  cfg.bottleneck_width = 24;
  cfg.aspp_rates = {1, 2};
  cfg.num_classes = 3;
  cfg.input_h = cfg.input_w = 16;
  Network<float> net(cfg, 9);
  auto x = random_unit({2, 3, 16, 16}, 10);
  auto z = Tensor<float>::from({2}, {0.2f, 0.8f});
  std::uint64_t measured;
  {
    flops::CountScope scope;
    net.forward(x, z);
    measured = scope.count();
  }
  auto rep = count_flops(net, 2);
  CHECK(rep.total_flops == measured);
}

TEST_CASE("flop totals are additive over layers") {
  auto cfg = desk_segmate();
  Network<float> net(cfg, 11);
  auto rep = count_flops(net, 1);
  std::uint64_t sum = 0;
  for (const auto& l : rep.layers) sum += l.flops;
  CHECK(sum == rep.total_flops);
  // a second run reports the identical numbers
  auto rep2 = count_flops(net, 1);
  CHECK(rep2.total_flops == rep.total_flops);
  CHECK(rep2.peak_activation_bytes == rep.peak_activation_bytes);
}

TEST_CASE("single conv layer peak is input + output + parameter bytes") {
  Rng rng(12);
  CostCtx<float> cx;
  auto x = cx.make_input({1, 3, 8, 8});
  auto p = Conv2dParams<float>::make(rng, 4, 3, 3, 1, 1);
  cx.conv2d("c", x, p);
  auto rep = cx.report(1);
  const std::uint64_t in_b = 3 * 8 * 8 * 4, out_b = 4 * 8 * 8 * 4;
  const std::uint64_t par_b = (4ull * 3 * 3 * 3 + 4) * 4;
  CHECK(rep.peak_activation_bytes == in_b + out_b + par_b);
}

TEST_CASE("two sequential convs follow the hand liveness table") {
  Rng rng(13);
  CostCtx<float> cx;
  auto x = cx.make_input({1, 2, 8, 8});       // 512 B
  auto p1 = Conv2dParams<float>::make(rng, 6, 2, 3, 1, 1);
  auto p2 = Conv2dParams<float>::make(rng, 2, 6, 3, 1, 1);
  auto h = cx.conv2d("c1", x, p1);            // 1536 B
  auto y = cx.conv2d("c2", h, p2);            // 512 B
  cx.mark_output(y);
  // step 1: x + h live = 2048; step 2: h + y live = 2048 (x dead)
  CHECK(cx.peak_live_bytes() == 2048);
  const std::uint64_t par_b = (6ull * 2 * 9 + 6 + 2ull * 6 * 9 + 2) * 4;
  CHECK(cx.report(1).peak_activation_bytes == 2048 + par_b);
}

TEST_CASE("gflops_per_volume recovers whole-volume totals from per-slice figures") {
  // 37.25 GFLOPs/slice over a 162-slice volume, quoted as 6,034 per volume
  CHECK(gflops_per_volume(37.25, 162) == doctest::Approx(6034.5));
  CHECK(std::abs(gflops_per_volume(37.25, 162) - 6034.0) <= 1.0);
  // a 5.78 GFLOPs/slice saving over 162 slices, quoted as 5,097 per volume;
  // both per-slice figures carry +-0.005 rounding, i.e. +-1.62 over a volume
  CHECK(std::abs(gflops_per_volume(37.25 - 5.78, 162) - 5097.0) <= 2.0);
  CHECK(gflops_per_volume(12.5, 1) == doctest::Approx(12.5));
  CHECK_THROWS_AS(gflops_per_volume(1.0, 0), Error);
}

TEST_CASE("segmate cuts flops and peak bytes by at least 15% on a shared encoder") {
  auto seg_cfg = desk_segmate();
  auto van_cfg = SegMateConfig::vanilla(seg_cfg.encoder_widths, seg_cfg.num_classes,
                                        seg_cfg.input_h, seg_cfg.input_w);
  Network<float> seg(seg_cfg, 14);
  Network<float> van(van_cfg, 15);
  auto rs = count_flops(seg, 1);
  auto rv = count_flops(van, 1);
  CHECK(static_cast<double>(rs.total_flops) <= 0.85 * static_cast<double>(rv.total_flops));
  CHECK(static_cast<double>(rs.peak_activation_bytes) <=
        0.85 * static_cast<double>(rv.peak_activation_bytes));
}

TEST_CASE("peak activation bytes scale with batch") {
  auto cfg = desk_segmate();
  Network<float> net(cfg, 16);
  const auto p1 = peak_activation_bytes(net, 1);
  const auto p4 = peak_activation_bytes(net, 4);
  CHECK(p4 > p1);
  auto rep = count_flops(net, 1);
  CHECK(p4 - rep.param_bytes() == doctest::Approx(4.0 * (p1 - rep.param_bytes())));
}

TEST_SUITE_END();
