#pragma once

#include <string>

#include <json.hpp>

#include "segmate/model.hpp"
#include "segmate/trainer.hpp"

namespace segmate {
namespace config_io {

using nlohmann::json;

inline json to_json(const SegMateConfig& c) {
  return json{{"encoder_widths", c.encoder_widths},
              {"decoder_widths", c.decoder_widths},
              {"bottleneck_width", c.bottleneck_width},
              {"aspp_rates", c.aspp_rates},
              {"num_classes", c.num_classes},
              {"input_h", c.input_h},
              {"input_w", c.input_w},
              {"use_slice_fusion", c.use_slice_fusion},
              {"use_asymmetric_decoder", c.use_asymmetric_decoder},
              {"use_cbam", c.use_cbam},
              {"use_se", c.use_se},
              {"use_film", c.use_film},
              {"use_boundary_head", c.use_boundary_head},
              {"use_presence_head", c.use_presence_head},
              {"se_reduction", c.se_reduction},
              {"film_hidden", c.film_hidden}};
}

inline SegMateConfig model_from_json(const json& j) {
  SegMateConfig c;
  try {
    if (j.contains("encoder_widths")) c.encoder_widths = j["encoder_widths"].get<std::vector<int>>();
    if (j.contains("decoder_widths")) c.decoder_widths = j["decoder_widths"].get<std::vector<int>>();
    if (j.contains("bottleneck_width")) c.bottleneck_width = j["bottleneck_width"].get<int>();
    if (j.contains("aspp_rates")) c.aspp_rates = j["aspp_rates"].get<std::vector<int>>();
    if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<int>();
    if (j.contains("input_h")) c.input_h = j["input_h"].get<int>();
    if (j.contains("input_w")) c.input_w = j["input_w"].get<int>();
    if (j.contains("use_slice_fusion")) c.use_slice_fusion = j["use_slice_fusion"].get<bool>();
    if (j.contains("use_asymmetric_decoder"))
      c.use_asymmetric_decoder = j["use_asymmetric_decoder"].get<bool>();
    if (j.contains("use_cbam")) c.use_cbam = j["use_cbam"].get<bool>();
    if (j.contains("use_se")) c.use_se = j["use_se"].get<bool>();
    if (j.contains("use_film")) c.use_film = j["use_film"].get<bool>();
    if (j.contains("use_boundary_head")) c.use_boundary_head = j["use_boundary_head"].get<bool>();
    if (j.contains("use_presence_head")) c.use_presence_head = j["use_presence_head"].get<bool>();
    if (j.contains("se_reduction")) c.se_reduction = j["se_reduction"].get<int>();
    if (j.contains("film_hidden")) c.film_hidden = j["film_hidden"].get<int>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("bad model config: ") + e.what());
  }
  return c;
}

inline json to_json(const LossWeights<float>& w) {
  return json{{"lambda_seg", w.lambda_seg},     {"lambda_bdy", w.lambda_bdy},
              {"lambda_prs", w.lambda_prs},     {"lambda_dice", w.lambda_dice},
              {"lambda_ce", w.lambda_ce},       {"alpha", w.alpha},
              {"focal_gamma", w.focal_gamma},   {"dice_eps", w.dice_eps},
              {"dice_exclude_background", w.dice_exclude_background},
              {"per_class_weights", w.per_class_weights}};
}

inline LossWeights<float> loss_from_json(const json& j) {
  LossWeights<float> w;
  try {
    if (j.contains("lambda_seg")) w.lambda_seg = j["lambda_seg"].get<float>();
    if (j.contains("lambda_bdy")) w.lambda_bdy = j["lambda_bdy"].get<float>();
    if (j.contains("lambda_prs")) w.lambda_prs = j["lambda_prs"].get<float>();
    if (j.contains("lambda_dice")) w.lambda_dice = j["lambda_dice"].get<float>();
    if (j.contains("lambda_ce")) w.lambda_ce = j["lambda_ce"].get<float>();
    if (j.contains("alpha")) w.alpha = j["alpha"].get<float>();
    if (j.contains("focal_gamma")) w.focal_gamma = j["focal_gamma"].get<float>();
    if (j.contains("dice_eps")) w.dice_eps = j["dice_eps"].get<float>();
    if (j.contains("dice_exclude_background"))
      w.dice_exclude_background = j["dice_exclude_background"].get<bool>();
    if (j.contains("per_class_weights"))
      w.per_class_weights = j["per_class_weights"].get<std::vector<float>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("bad loss config: ") + e.what());
  }
  return w;
}

inline json to_json(const TrainConfig& c) {
  json j{{"lr", c.lr},
         {"weight_decay", c.weight_decay},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"plateau_factor", c.plateau_factor},
         {"plateau_patience", c.plateau_patience},
         {"plateau_min_delta", c.plateau_min_delta},
         {"seed", c.seed}};
  j["loss"] = to_json(c.loss);
  return j;
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  try {
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("plateau_factor")) c.plateau_factor = j["plateau_factor"].get<double>();
    if (j.contains("plateau_patience")) c.plateau_patience = j["plateau_patience"].get<int>();
    if (j.contains("plateau_min_delta"))
      c.plateau_min_delta = j["plateau_min_delta"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<unsigned>();
    if (j.contains("loss")) c.loss = loss_from_json(j["loss"]);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("bad train config: ") + e.what());
  }
  return c;
}

inline std::string config_string(const SegMateConfig& c) { return to_json(c).dump(); }

inline SegMateConfig model_from_string(const std::string& s) {
  json j = json::parse(s, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::Format, "checkpoint carries invalid config JSON");
  return model_from_json(j);
}

}  // namespace config_io
}  // namespace segmate
