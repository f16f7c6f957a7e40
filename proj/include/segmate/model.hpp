#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segmate/blocks.hpp"

namespace segmate {

// Full architecture description. The toggles mirror the ablation switches;
// with everything off and mirrored decoder widths this builds a plain U-Net.
// The ASPP bottleneck comes and goes with use_asymmetric_decoder: the
// asymmetric design is "capped decoder via an ASPP bottleneck" as one unit.
struct SegMateConfig {
  std::vector<int> encoder_widths{12, 24, 48};
  std::vector<int> decoder_widths{32, 24};
  int bottleneck_width = 48;
  std::vector<int> aspp_rates{1, 2, 4, 8};
  int num_classes = 4;
  int input_h = 48;
  int input_w = 48;

  bool use_slice_fusion = true;
  bool use_asymmetric_decoder = true;
  bool use_cbam = true;
  bool use_se = true;
  bool use_film = true;
  bool use_boundary_head = true;
  bool use_presence_head = true;

  int se_reduction = 16;
  int film_hidden = 128;

  int num_stages() const { return static_cast<int>(encoder_widths.size()); }
  int downsample_factor() const { return 1 << (num_stages() - 1); }

  void validate() const {
    if (encoder_widths.size() < 2)
      fail(ErrorKind::Config, "encoder_widths: need at least 2 stages");
    for (int w : encoder_widths)
      if (w < 1) fail(ErrorKind::Config, "encoder_widths: entries must be positive");
    if (decoder_widths.size() != encoder_widths.size() - 1)
      fail(ErrorKind::Config, "decoder_widths: need exactly " +
                                  std::to_string(encoder_widths.size() - 1) +
                                  " entries (one per skip), got " +
                                  std::to_string(decoder_widths.size()));
    for (int w : decoder_widths) {
      if (w < 1) fail(ErrorKind::Config, "decoder_widths: entries must be positive");
      if (use_asymmetric_decoder && w > 160)
        fail(ErrorKind::Config,
             "decoder_widths: entries must be <= 160 when use_asymmetric_decoder is set, got " +
                 std::to_string(w));
    }
    if (num_classes < 2) fail(ErrorKind::Config, "num_classes: must be >= 2");
    if (bottleneck_width < 1) fail(ErrorKind::Config, "bottleneck_width: must be positive");
    if (aspp_rates.empty()) fail(ErrorKind::Config, "aspp_rates: must not be empty");
    for (int r : aspp_rates)
      if (r < 1) fail(ErrorKind::Config, "aspp_rates: rates must be >= 1");
    if (input_h < 1 || input_w < 1) fail(ErrorKind::Config, "input_size: must be positive");
    if (se_reduction < 1) fail(ErrorKind::Config, "se_reduction: must be >= 1");
    if (film_hidden < 1) fail(ErrorKind::Config, "film_hidden: must be >= 1");
  }

  // desk-scale training preset: small enough to train on CPU in minutes
  static SegMateConfig desk() { return SegMateConfig{}; }

  // analysis preset with a wide encoder, where the capped decoder pays off:
  // a heavy backbone feeding a decoder held at <=160 channels
  static SegMateConfig reference() {
    SegMateConfig c;
    c.encoder_widths = {64, 96, 160, 256, 512};
    c.decoder_widths = {96, 96, 64, 32};
    c.bottleneck_width = 160;
    c.aspp_rates = {1, 2, 4, 8};
    c.num_classes = 10;
    c.input_h = c.input_w = 128;
    return c;
  }

  // mirrored symmetric decoder, no attention, no FiLM, no fusion, seg head only
  static SegMateConfig vanilla(std::vector<int> enc, int num_classes, int h, int w) {
    SegMateConfig c;
    c.encoder_widths = std::move(enc);
    c.decoder_widths.clear();
    for (std::size_t i = c.encoder_widths.size() - 1; i >= 1; --i)
      c.decoder_widths.push_back(c.encoder_widths[i - 1]);
    c.num_classes = num_classes;
    c.input_h = h;
    c.input_w = w;
    c.use_slice_fusion = false;
    c.use_asymmetric_decoder = false;
    c.use_cbam = false;
    c.use_se = false;
    c.use_film = false;
    c.use_boundary_head = false;
    c.use_presence_head = false;
    return c;
  }
};

template <typename V>
struct NetOutput {
  V seg_logits;
  std::optional<V> boundary_logits;
  std::optional<V> presence_logits;
};

struct RunMode {
  bool training = false;
  bool encoder_frozen = false;  // frozen fine-tuning phase: encoder BN runs on running stats
};

template <typename T>
class Network {
 public:
  Network(SegMateConfig cfg, int seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(static_cast<std::uint64_t>(seed) * 0x9e3779b97f4a7c15ull + 1);
    const int S = cfg_.num_stages();

    if (cfg_.use_slice_fusion) fusion_ = SliceFusionParams<T>::make(rng);

    int in_ch = cfg_.use_slice_fusion ? 1 : 3;
    for (int i = 0; i < S; ++i) {
      const int stride = i == 0 ? 1 : 2;
      encoder_.push_back(ConvBnParams<T>::make(rng, cfg_.encoder_widths[i], in_ch, 3, stride, 1));
      in_ch = cfg_.encoder_widths[i];
    }

    int bneck_ch = cfg_.encoder_widths.back();
    if (cfg_.use_asymmetric_decoder) {
      aspp_ = AsppParams<T>::make(rng, bneck_ch, cfg_.bottleneck_width, cfg_.aspp_rates);
      bneck_ch = cfg_.bottleneck_width;
    }
    if (cfg_.use_film) film_ = FilmParams<T>::make(rng, bneck_ch, cfg_.film_hidden);
    bottleneck_channels_ = bneck_ch;

    // decoder levels are listed deep-first, matching decoder_widths
    int deeper_ch = bneck_ch;
    for (int d = 0; d < S - 1; ++d) {
      const int stage = S - 2 - d;  // spatial stage this level restores
      const int cat_ch = deeper_ch + cfg_.encoder_widths[stage];
      const int out_ch = cfg_.decoder_widths[d];
      DecoderLevel lvl;
      if (cfg_.use_cbam) lvl.cbam = CbamParams<T>::make(rng, cat_ch, cfg_.se_reduction);
      lvl.block = ConvBnParams<T>::make(rng, out_ch, cat_ch, 3, 1, 1);
      decoder_.push_back(std::move(lvl));
      deeper_ch = out_ch;
    }

    // one SE-gated nested node per adjacent decoder level pair
    if (cfg_.use_se) {
      for (int d = 0; d + 1 < S - 1; ++d) {
        const int deep_ch = cfg_.decoder_widths[d];
        const int shallow_ch = cfg_.decoder_widths[d + 1];
        NestedNode node;
        node.proj = Conv2dParams<T>::make(rng, shallow_ch, deep_ch + shallow_ch, 1);
        node.se = SeParams<T>::make(rng, shallow_ch, cfg_.se_reduction);
        nested_.push_back(std::move(node));
      }
    }

    const int final_ch = cfg_.decoder_widths.back();
    seg_head_ = Conv2dParams<T>::make(rng, cfg_.num_classes, final_ch, 1);
    if (cfg_.use_boundary_head) boundary_head_ = Conv2dParams<T>::make(rng, 1, final_ch, 1);
    if (cfg_.use_presence_head)
      presence_head_ = LinearParams<T>::make(rng, cfg_.num_classes, bneck_ch);

    collect_params();
    for (auto& p : params_)
      if (p.trainable) p.tensor.set_requires_grad(true);
  }

  const SegMateConfig& config() const { return cfg_; }
  int bottleneck_channels() const { return bottleneck_channels_; }

  // all named tensors, trainable parameters and BN buffers alike
  ParamList<T>& named_tensors() { return params_; }
  const ParamList<T>& named_tensors() const { return params_; }

  // true for parameters living in the frozen group during fine-tuning warmup
  // (SliceFusion and the encoder stages)
  bool in_encoder_group(const std::string& name) const {
    return name.rfind("slice_fusion.", 0) == 0 || name.rfind("enc", 0) == 0;
  }

  // the architecture, interpretable by any context (eager or cost analysis)
  template <class Ctx>
  NetOutput<typename Ctx::Value> run(Ctx& cx, const typename Ctx::Value& stack,
                                     const typename Ctx::Value& z, RunMode mode = {}) {
    const int S = cfg_.num_stages();
    const bool enc_bn = mode.training && !mode.encoder_frozen;
    const bool dec_bn = mode.training;

    typename Ctx::Value x = stack;
    if (cfg_.use_slice_fusion) x = slice_fusion(cx, x, *fusion_, enc_bn);

    std::vector<typename Ctx::Value> skips;
    for (int i = 0; i < S; ++i) {
      x = conv_bn_silu(cx, "enc" + std::to_string(i), x, encoder_[i], enc_bn);
      skips.push_back(x);
    }

    if (aspp_) x = aspp(cx, x, *aspp_, dec_bn);
    if (film_) x = film(cx, x, z, *film_);
    typename Ctx::Value bottleneck = x;

    std::vector<typename Ctx::Value> level_out;
    for (int d = 0; d < S - 1; ++d) {
      const int stage = S - 2 - d;
      const std::string name = "dec" + std::to_string(d);
      auto up = cx.upsample_bilinear(x, 2);
      auto cat = cx.concat({up, skips[static_cast<std::size_t>(stage)]}, 1);
      if (decoder_[d].cbam) cat = cbam(cx, cat, *decoder_[d].cbam, name + ".cbam");
      auto out = conv_bn_silu(cx, name + ".block", cat, decoder_[d].block, dec_bn);
      if (cfg_.use_se && d >= 1) {
        // nested skip node fusing this level with the deeper level's output
        NestedNode& node = nested_[static_cast<std::size_t>(d - 1)];
        const std::string nname = "nested" + std::to_string(d - 1);
        auto fusedin = cx.concat({cx.upsample_bilinear(level_out.back(), 2), out}, 1);
        auto proj = cx.conv2d(nname + ".proj", fusedin, node.proj);
        out = cx.add(out, se_gate(cx, proj, node.se, nname + ".se"));
      }
      level_out.push_back(out);
      x = out;
    }

    NetOutput<typename Ctx::Value> result{cx.conv2d("seg_head", x, seg_head_), {}, {}};
    if (boundary_head_) result.boundary_logits = cx.conv2d("boundary_head", x, *boundary_head_);
    if (presence_head_)
      result.presence_logits =
          cx.linear("presence_head", cx.global_avg_pool(bottleneck), *presence_head_);
    return result;
  }

  NetOutput<Tensor<T>> forward(const Tensor<T>& stack, const Tensor<T>& z_norm,
                               RunMode mode = {}) {
    check_shape(stack.ndim() == 4 && stack.dim(1) == 3,
                "forward input must be N,3,H,W, got " + shape_str(stack.shape()));
    const int f = cfg_.downsample_factor();
    if (stack.dim(2) % f != 0 || stack.dim(3) % f != 0)
      fail(ErrorKind::Shape, "input " + shape_str(stack.shape()) + " not divisible by " +
                                 std::to_string(f) + " across " +
                                 std::to_string(cfg_.num_stages()) + " stages");
    Tensor<T> z = z_norm;
    if (cfg_.use_film) {
      check_shape(z.numel() == stack.dim(0), "z_norm must have one entry per batch element");
      for (T v : z.data())
        if (v < T(0) || v > T(1))
          fail(ErrorKind::Range, "z_norm must lie in [0,1], got " + std::to_string(v));
      z = Tensor<T>::from({stack.dim(0), 1}, {z.data().begin(), z.data().end()});
    } else {
      z = Tensor<T>::zeros({stack.dim(0), 1});
    }
    Exec<T> cx;
    return run(cx, stack, z, mode);
  }

  // direct access for ablation tooling and tests
  std::optional<SliceFusionParams<T>>& fusion_params() { return fusion_; }
  std::vector<ConvBnParams<T>>& encoder_params() { return encoder_; }
  std::optional<AsppParams<T>>& aspp_params() { return aspp_; }
  std::optional<FilmParams<T>>& film_params() { return film_; }
  CbamParams<T>* cbam_params(int level) {
    auto& lvl = decoder_[static_cast<std::size_t>(level)];
    return lvl.cbam ? &*lvl.cbam : nullptr;
  }

  struct NestedNode {
    Conv2dParams<T> proj;
    SeParams<T> se;
  };
  std::vector<NestedNode>& nested() { return nested_; }

 private:
  struct DecoderLevel {
    std::optional<CbamParams<T>> cbam;
    ConvBnParams<T> block;
  };

  void collect_params() {
    params_.clear();
    if (fusion_) fusion_->collect("slice_fusion", params_);
    for (std::size_t i = 0; i < encoder_.size(); ++i)
      encoder_[i].collect("enc" + std::to_string(i), params_);
    if (aspp_) aspp_->collect("aspp", params_);
    if (film_) film_->collect("film", params_);
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
      if (decoder_[d].cbam) decoder_[d].cbam->collect("dec" + std::to_string(d) + ".cbam", params_);
      decoder_[d].block.collect("dec" + std::to_string(d) + ".block", params_);
    }
    for (std::size_t i = 0; i < nested_.size(); ++i) {
      nested_[i].proj.collect("nested" + std::to_string(i) + ".proj", params_);
      nested_[i].se.collect("nested" + std::to_string(i) + ".se", params_);
    }
    seg_head_.collect("seg_head", params_);
    if (boundary_head_) boundary_head_->collect("boundary_head", params_);
    if (presence_head_) presence_head_->collect("presence_head", params_);
  }

  SegMateConfig cfg_;
  std::optional<SliceFusionParams<T>> fusion_;
  std::vector<ConvBnParams<T>> encoder_;
  std::optional<AsppParams<T>> aspp_;
  std::optional<FilmParams<T>> film_;
  std::vector<DecoderLevel> decoder_;
  std::vector<NestedNode> nested_;
  Conv2dParams<T> seg_head_;
  std::optional<Conv2dParams<T>> boundary_head_;
  std::optional<LinearParams<T>> presence_head_;
  int bottleneck_channels_ = 0;
  ParamList<T> params_;
};

}  // namespace segmate
