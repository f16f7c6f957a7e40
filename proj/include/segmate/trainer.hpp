#pragma once

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "segmate/losses.hpp"
#include "segmate/metrics.hpp"
#include "segmate/model.hpp"
#include "segmate/optim.hpp"
#include "segmate/volume.hpp"

namespace segmate {

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 1e-4;
  int epochs = 100;
  int batch_size = 32;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double plateau_min_delta = 1e-4;
  unsigned seed = 42;
  LossWeights<float> loss;
  bool log_steps = false;

  void validate() const {
    if (!(lr > 0)) fail(ErrorKind::Config, "lr must be > 0");
    if (batch_size < 1) fail(ErrorKind::Config, "batch_size must be >= 1");
    if (epochs < 1) fail(ErrorKind::Config, "epochs must be >= 1");
    if (!(plateau_factor > 0 && plateau_factor < 1))
      fail(ErrorKind::Config, "plateau_factor must lie in (0,1)");
    if (weight_decay < 0) fail(ErrorKind::Config, "weight_decay must be >= 0");
  }
};

struct FineTuneConfig {
  int epochs = 25;
  int frozen_epochs = 5;
  double lr = 5e-6;
  std::string base_checkpoint;

  void validate() const {
    if (epochs < 1) fail(ErrorKind::Config, "finetune epochs must be >= 1");
    if (frozen_epochs < 0 || frozen_epochs > epochs)
      fail(ErrorKind::Config, "frozen_epochs must lie in [0, epochs]");
    if (!(lr > 0)) fail(ErrorKind::Config, "finetune lr must be > 0");
  }
};

struct StepLog {
  int epoch = 0, step = 0;
  float total = 0, seg = 0, bdy = 0, prs = 0;
};

struct EpochLog {
  int epoch = 0;
  float loss_total = 0, loss_seg = 0, loss_bdy = 0, loss_prs = 0;
  float loss_dice = 0, loss_focal = 0, loss_ce = 0;
  double val_dice = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;  // filled when log_steps is on
  double best_val_dice = 0;
  int best_epoch = -1;
};

namespace train_detail {

struct Sample {
  Tensor<float> stack;               // 3,H,W at network input size
  std::vector<std::uint8_t> target;  // H*W at network input size
  float z_norm = 0;
};

inline Sample prepare_sample(const Volume& vol, const MaskVolume& mask, int t, int ih, int iw) {
  Sample s;
  SliceSample raw = data::make_triplet(vol, t);
  s.z_norm = raw.z_norm;
  if (vol.h == ih && vol.w == iw) {
    s.stack = raw.stack;
  } else {
    s.stack = Tensor<float>({3, ih, iw});
    const std::size_t in_plane = static_cast<std::size_t>(vol.h) * vol.w;
    const std::size_t out_plane = static_cast<std::size_t>(ih) * iw;
    for (int c = 0; c < 3; ++c) {
      std::vector<float> ch(raw.stack.data().begin() + c * in_plane,
                            raw.stack.data().begin() + (c + 1) * in_plane);
      auto r = data::resize_bilinear(ch, vol.h, vol.w, ih, iw);
      std::copy(r.begin(), r.end(), s.stack.data().begin() + c * out_plane);
    }
  }
  const std::size_t plane = static_cast<std::size_t>(vol.h) * vol.w;
  std::vector<std::uint8_t> sl(mask.labels.begin() + static_cast<std::size_t>(t) * plane,
                               mask.labels.begin() + static_cast<std::size_t>(t + 1) * plane);
  s.target = data::resize_nearest(sl, vol.h, vol.w, ih, iw);
  return s;
}

inline std::vector<Sample> build_samples(const std::vector<data::PhantomCase>& cases, int ih,
                                         int iw) {
  std::vector<Sample> out;
  for (const auto& c : cases) {
    if (c.vol.z != c.mask.z || c.vol.h != c.mask.h || c.vol.w != c.mask.w)
      fail(ErrorKind::Data, "volume/mask grid mismatch for " + c.vol.patient_id);
    for (int t = 0; t < c.vol.z; ++t) out.push_back(prepare_sample(c.vol, c.mask, t, ih, iw));
  }
  return out;
}

// inverse square-root pixel frequency, normalized to mean 1
inline std::vector<float> class_weights_from(const std::vector<Sample>& samples, int k) {
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  double total = 0;
  for (const auto& s : samples)
    for (std::uint8_t v : s.target) {
      count[v] += 1;
      total += 1;
    }
  std::vector<float> w(static_cast<std::size_t>(k));
  double sum = 0;
  for (int c = 0; c < k; ++c) {
    const double freq = std::max(count[static_cast<std::size_t>(c)], 1.0) / total;
    w[static_cast<std::size_t>(c)] = static_cast<float>(1.0 / std::sqrt(freq));
    sum += w[static_cast<std::size_t>(c)];
  }
  for (auto& v : w) v = static_cast<float>(v * k / sum);
  return w;
}

}  // namespace train_detail

// Forward every slice of a volume through the network in eval mode. Returns
// per-slice K,H,W logits at the original volume resolution.
inline std::vector<Tensor<float>> infer_slice_logits(Network<float>& net, const Volume& vol,
                                                     int batch_size,
                                                     std::vector<Tensor<float>>* presence_out =
                                                         nullptr) {
  const auto& cfg = net.config();
  std::vector<Tensor<float>> logits;
  logits.reserve(static_cast<std::size_t>(vol.z));
  const std::size_t net_plane = static_cast<std::size_t>(cfg.input_h) * cfg.input_w;
  for (int t0 = 0; t0 < vol.z; t0 += batch_size) {
    const int n = std::min(batch_size, vol.z - t0);
    Tensor<float> stack({n, 3, cfg.input_h, cfg.input_w});
    Tensor<float> z({n});
    for (int i = 0; i < n; ++i) {
      MaskVolume dummy{vol.z, vol.h, vol.w,
                       std::vector<std::uint8_t>(static_cast<std::size_t>(vol.z) * vol.h * vol.w),
                       1, vol.sz, vol.sy, vol.sx};
      auto s = train_detail::prepare_sample(vol, dummy, t0 + i, cfg.input_h, cfg.input_w);
      std::copy(s.stack.data().begin(), s.stack.data().end(),
                stack.data().begin() + static_cast<std::size_t>(i) * 3 * net_plane);
      z.data()[i] = s.z_norm;
    }
    auto out = net.forward(stack, z);
    const int k = cfg.num_classes;
    for (int i = 0; i < n; ++i) {
      Tensor<float> sl({k, cfg.input_h, cfg.input_w});
      std::copy(out.seg_logits.data().begin() + static_cast<std::size_t>(i) * k * net_plane,
                out.seg_logits.data().begin() + static_cast<std::size_t>(i + 1) * k * net_plane,
                sl.data().begin());
      if (cfg.input_h != vol.h || cfg.input_w != vol.w) {
        Tensor<float> up({k, vol.h, vol.w});
        for (int c = 0; c < k; ++c) {
          std::vector<float> ch(sl.data().begin() + static_cast<std::size_t>(c) * net_plane,
                                sl.data().begin() + static_cast<std::size_t>(c + 1) * net_plane);
          auto r = data::resize_bilinear(ch, cfg.input_h, cfg.input_w, vol.h, vol.w);
          std::copy(r.begin(), r.end(),
                    up.data().begin() + static_cast<std::size_t>(c) * vol.h * vol.w);
        }
        logits.push_back(up);
      } else {
        logits.push_back(sl);
      }
      if (presence_out) {
        Tensor<float> pr({k});
        if (out.presence_logits)
          std::copy(out.presence_logits->data().begin() + static_cast<std::size_t>(i) * k,
                    out.presence_logits->data().begin() + static_cast<std::size_t>(i + 1) * k,
                    pr.data().begin());
        presence_out->push_back(pr);
      }
    }
  }
  return logits;
}

inline PredictionVolume infer_volume(Network<float>& net, const Volume& vol, int batch_size,
                                     std::optional<float> gate_threshold = std::nullopt) {
  std::vector<Tensor<float>> presence;
  auto logits = infer_slice_logits(net, vol, batch_size, gate_threshold ? &presence : nullptr);
  return metrics::reconstruct_volume<float>(logits, presence, gate_threshold, vol.sz, vol.sy,
                                            vol.sx);
}

// mean foreground 3D Dice over a case list
inline double validation_dice(Network<float>& net, const std::vector<data::PhantomCase>& cases,
                              int batch_size) {
  if (cases.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& c : cases) {
    auto pred = infer_volume(net, c.vol, batch_size);
    double case_acc = 0.0;
    for (int k = 1; k < c.mask.num_classes; ++k) case_acc += metrics::dice_3d(pred, c.mask, k);
    acc += case_acc / std::max(1, c.mask.num_classes - 1);
  }
  return acc / static_cast<double>(cases.size());
}

namespace train_detail {

struct LoopOptions {
  int epochs;
  int frozen_epochs = 0;  // encoder group receives zero updates before this epoch
  double lr;
};

inline TrainResult run_loop(Network<float>& net, const std::vector<data::PhantomCase>& train_cases,
                            const std::vector<data::PhantomCase>& val_cases,
                            const TrainConfig& cfg, const LoopOptions& opt, std::ostream* log) {
  cfg.validate();
  if (train_cases.empty()) fail(ErrorKind::Data, "training dataset is empty");
  const auto& mc = net.config();
  const int k = mc.num_classes;
  for (const auto& c : train_cases)
    if (c.mask.num_classes != k)
      fail(ErrorKind::Data, "dataset has " + std::to_string(c.mask.num_classes) +
                                " classes, network expects " + std::to_string(k));

  auto samples = build_samples(train_cases, mc.input_h, mc.input_w);
  LossWeights<float> lw = cfg.loss;
  if (lw.per_class_weights.empty()) lw.per_class_weights = class_weights_from(samples, k);
  lw.validate(k);

  AdamW<float> opt_state(static_cast<float>(opt.lr), static_cast<float>(cfg.weight_decay));
  PlateauScheduler<double> sched(cfg.plateau_factor, cfg.plateau_patience,
                                 cfg.plateau_min_delta);
  auto& params = net.named_tensors();
  std::vector<bool> frozen_mask(params.size(), false);
  for (std::size_t i = 0; i < params.size(); ++i)
    frozen_mask[i] = net.in_encoder_group(params[i].name);

  Rng rng(cfg.seed);
  TrainResult result;
  std::vector<std::vector<float>> best_snapshot;

  const std::size_t plane = static_cast<std::size_t>(mc.input_h) * mc.input_w;
  std::vector<int> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const bool frozen_phase = epoch < opt.frozen_epochs;
    // Fisher-Yates over the fixed sample order
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double sum_total = 0, sum_seg = 0, sum_bdy = 0, sum_prs = 0;
    double sum_dice = 0, sum_focal = 0, sum_ce = 0;
    int steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const int n = static_cast<int>(
          std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - b0));
      Tensor<float> stack({n, 3, mc.input_h, mc.input_w});
      Tensor<float> z({n});
      std::vector<int> labels(static_cast<std::size_t>(n) * plane);
      for (int i = 0; i < n; ++i) {
        const Sample& s = samples[static_cast<std::size_t>(order[b0 + i])];
        std::copy(s.stack.data().begin(), s.stack.data().end(),
                  stack.data().begin() + static_cast<std::size_t>(i) * 3 * plane);
        z.data()[i] = s.z_norm;
        for (std::size_t p = 0; p < plane; ++p)
          labels[static_cast<std::size_t>(i) * plane + p] = s.target[p];
      }
      auto targets = losses::make_targets<float>(labels, n, mc.input_h, mc.input_w, k);

      Tape<float> tape;
      auto out = net.forward(stack, z, {true, frozen_phase});
      auto loss = losses::total_loss(out, targets, lw);
      const float total = loss.total.item();
      if (!std::isfinite(total))
        fail(ErrorKind::Data, "training diverged: non-finite loss at epoch " +
                                  std::to_string(epoch) + " step " + std::to_string(steps));
      tape.backward(loss.total);
      opt_state.step(params, frozen_phase ? frozen_mask : std::vector<bool>{});
      opt_state.zero_grad(params);

      sum_total += total;
      sum_seg += loss.seg;
      sum_bdy += loss.bdy;
      sum_prs += loss.prs;
      sum_dice += loss.dice;
      sum_focal += loss.focal;
      sum_ce += loss.ce;
      if (cfg.log_steps) {
        result.steps.push_back({epoch, steps, total, loss.seg, loss.bdy, loss.prs});
        if (log)
          (*log) << "step epoch=" << epoch << " step=" << steps << " loss_total=" << total
                 << " loss_seg=" << loss.seg << " loss_bdy=" << loss.bdy
                 << " loss_prs=" << loss.prs << "\n";
      }
      ++steps;
    }

    EpochLog el;
    el.epoch = epoch;
    el.loss_total = static_cast<float>(sum_total / steps);
    el.loss_seg = static_cast<float>(sum_seg / steps);
    el.loss_bdy = static_cast<float>(sum_bdy / steps);
    el.loss_prs = static_cast<float>(sum_prs / steps);
    el.loss_dice = static_cast<float>(sum_dice / steps);
    el.loss_focal = static_cast<float>(sum_focal / steps);
    el.loss_ce = static_cast<float>(sum_ce / steps);
    el.val_dice = validation_dice(net, val_cases, cfg.batch_size);
    el.lr = opt_state.lr();
    result.epochs.push_back(el);
    if (log) {
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "epoch=%d loss_total=%.6f loss_seg=%.6f loss_bdy=%.6f loss_prs=%.6f "
                    "val_dice=%.6f lr=%.8f%s",
                    epoch, el.loss_total, el.loss_seg, el.loss_bdy, el.loss_prs, el.val_dice,
                    el.lr, frozen_phase ? " frozen=1" : "");
      (*log) << buf << "\n";
    }

    if (!val_cases.empty()) {
      if (el.val_dice > result.best_val_dice || result.best_epoch < 0) {
        result.best_val_dice = el.val_dice;
        result.best_epoch = epoch;
        best_snapshot.clear();
        for (auto& p : params)
          best_snapshot.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
      }
      if (sched.observe(el.val_dice))
        opt_state.set_lr(opt_state.lr() * static_cast<float>(sched.factor()));
    }
  }

  // retain the best-validation parameters; without a validation set the
  // final-epoch parameters stand
  if (!best_snapshot.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      std::copy(best_snapshot[i].begin(), best_snapshot[i].end(), params[i].tensor.data().begin());
  return result;
}

}  // namespace train_detail

inline TrainResult train(Network<float>& net, const std::vector<data::PhantomCase>& train_cases,
                         const std::vector<data::PhantomCase>& val_cases, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  return train_detail::run_loop(net, train_cases, val_cases, cfg,
                                {cfg.epochs, 0, cfg.lr}, log);
}

inline TrainResult fine_tune(Network<float>& net,
                             const std::vector<data::PhantomCase>& train_cases,
                             const std::vector<data::PhantomCase>& val_cases,
                             const TrainConfig& base_cfg, const FineTuneConfig& ft,
                             std::ostream* log = nullptr) {
  ft.validate();
  return train_detail::run_loop(net, train_cases, val_cases, base_cfg,
                                {ft.epochs, ft.frozen_epochs, ft.lr}, log);
}

}  // namespace segmate
