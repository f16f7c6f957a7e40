// segmate: train / finetune / infer / eval / analyze / phantom

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "segmate/checkpoint.hpp"
#include "segmate/config_io.hpp"
#include "segmate/cost_model.hpp"
#include "segmate/segmate.hpp"

namespace fs = std::filesystem;
using namespace segmate;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Data, "cannot open config " + path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::Format, path + " is not valid JSON");
  return j;
}

// dataset directory: vol pairs <name>.smv + <name>_mask.smv
std::vector<data::PhantomCase> load_dataset(const std::string& dir) {
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto p = e.path();
    if (p.extension() != ".smv") continue;
    const auto stem = p.stem().string();
    if (stem.size() > 5 && stem.substr(stem.size() - 5) == "_mask") continue;
    stems.push_back((p.parent_path() / stem).string());
  }
  std::sort(stems.begin(), stems.end());
  std::vector<data::PhantomCase> cases;
  for (const auto& s : stems) {
    data::PhantomCase c;
    c.vol = smv::read_volume(s + ".smv");
    const auto mask_path = s + "_mask.smv";
    if (!fs::exists(mask_path))
      fail(ErrorKind::Data, "missing mask file " + mask_path + " for " + s + ".smv");
    c.mask = smv::read_mask(mask_path);
    if (c.mask.z != c.vol.z || c.mask.h != c.vol.h || c.mask.w != c.vol.w)
      fail(ErrorKind::Data, "mask grid does not match volume for " + s);
    cases.push_back(std::move(c));
  }
  if (cases.empty()) fail(ErrorKind::Data, "no volume/mask pairs found in " + dir);
  return cases;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(ErrorKind::Data, "cannot write " + path);
  f << text;
}

void print_cost_table(const CostReport& rep, int slices, std::ostream& os) {
  os << "layer                                      flops       params    out_bytes\n";
  for (const auto& l : rep.layers) {
    char buf[120];
    std::snprintf(buf, sizeof buf, "%-36s %12llu %12llu %12llu\n", l.name.c_str(),
                  static_cast<unsigned long long>(l.flops),
                  static_cast<unsigned long long>(l.params),
                  static_cast<unsigned long long>(l.output_bytes));
    os << buf;
  }
  os << "\n";
  rep.write_kv(os);
  char buf[160];
  std::snprintf(buf, sizeof buf, "gflops_per_volume{slices=%d}=%.3f\n", slices,
                gflops_per_volume(rep.gflops_per_slice, slices));
  os << buf;
  std::snprintf(buf, sizeof buf, "peak_activation_mb=%.2f\n",
                rep.peak_activation_bytes / 1048576.0);
  os << buf;
}

json cost_to_json(const CostReport& rep, int slices) {
  json layers = json::array();
  for (const auto& l : rep.layers)
    layers.push_back({{"name", l.name},
                      {"flops", l.flops},
                      {"params", l.params},
                      {"output_bytes", l.output_bytes}});
  return json{{"layers", layers},
              {"total_flops", rep.total_flops},
              {"total_params", rep.total_params},
              {"buffer_params", rep.buffer_params},
              {"param_bytes", rep.param_bytes()},
              {"peak_activation_bytes", rep.peak_activation_bytes},
              {"gflops_per_slice", rep.gflops_per_slice},
              {"slices", slices},
              {"gflops_per_volume", gflops_per_volume(rep.gflops_per_slice, slices)}};
}

struct CommonTrainArgs {
  std::string data_dir, out_dir, config_path;
  int epochs = -1, batch = -1, val_count = -1;
  double lr = -1;
  int seed = -1;
};

void split_dataset(std::vector<data::PhantomCase>& all, int val_count,
                   std::vector<data::PhantomCase>& train_cases,
                   std::vector<data::PhantomCase>& val_cases) {
  if (val_count < 0) val_count = std::max(1, static_cast<int>(all.size()) / 5);
  if (val_count >= static_cast<int>(all.size()))
    fail(ErrorKind::Config, "val count leaves no training volumes");
  train_cases.assign(all.begin(), all.end() - val_count);
  val_cases.assign(all.end() - val_count, all.end());
}

int do_train(const CommonTrainArgs& args) {
  json j = args.config_path.empty() ? json::object() : load_json(args.config_path);
  auto cases = load_dataset(args.data_dir);

  SegMateConfig mc = config_io::model_from_json(j);
  if (!j.contains("num_classes")) mc.num_classes = cases[0].mask.num_classes;
  if (!j.contains("input_h")) mc.input_h = cases[0].vol.h;
  if (!j.contains("input_w")) mc.input_w = cases[0].vol.w;
  TrainConfig tc = config_io::train_from_json(j);
  if (args.epochs > 0) tc.epochs = args.epochs;
  if (args.batch > 0) tc.batch_size = args.batch;
  if (args.lr > 0) tc.lr = args.lr;
  if (args.seed >= 0) tc.seed = static_cast<unsigned>(args.seed);
  mc.validate();
  tc.validate();

  std::vector<data::PhantomCase> train_cases, val_cases;
  split_dataset(cases, args.val_count, train_cases, val_cases);

  fs::create_directories(args.out_dir);
  std::ofstream log(fs::path(args.out_dir) / "train_log.txt");
  Network<float> net(mc, static_cast<int>(tc.seed));
  std::cout << "training on " << train_cases.size() << " volumes, validating on "
            << val_cases.size() << "\n";
  auto res = train(net, train_cases, val_cases, tc, &log);
  for (const auto& e : res.epochs)
    std::cout << "epoch=" << e.epoch << " loss_total=" << e.loss_total
              << " val_dice=" << e.val_dice << " lr=" << e.lr << "\n";

  const auto ckpt = (fs::path(args.out_dir) / "checkpoint.smc").string();
  checkpoint::save(ckpt, config_io::config_string(mc), net.named_tensors());
  std::cout << "best_val_dice=" << res.best_val_dice << " best_epoch=" << res.best_epoch
            << "\ncheckpoint=" << ckpt << "\n";
  return 0;
}

int do_finetune(const CommonTrainArgs& args, const std::string& base, int frozen_epochs) {
  json j = args.config_path.empty() ? json::object() : load_json(args.config_path);
  auto loaded = checkpoint::load(base);
  SegMateConfig mc = config_io::model_from_string(loaded.config_json);
  Network<float> net(mc, 0);
  checkpoint::apply(loaded, net);

  auto cases = load_dataset(args.data_dir);
  TrainConfig tc = config_io::train_from_json(j);
  FineTuneConfig ft;
  ft.base_checkpoint = base;
  if (args.epochs > 0) ft.epochs = args.epochs;
  if (frozen_epochs >= 0) ft.frozen_epochs = frozen_epochs;
  if (args.lr > 0)
    ft.lr = args.lr;
  if (args.batch > 0) tc.batch_size = args.batch;
  if (args.seed >= 0) tc.seed = static_cast<unsigned>(args.seed);
  ft.validate();
  tc.validate();

  std::vector<data::PhantomCase> train_cases, val_cases;
  split_dataset(cases, args.val_count, train_cases, val_cases);

  fs::create_directories(args.out_dir);
  std::ofstream log(fs::path(args.out_dir) / "finetune_log.txt");
  auto res = fine_tune(net, train_cases, val_cases, tc, ft, &log);
  const auto ckpt = (fs::path(args.out_dir) / "checkpoint.smc").string();
  checkpoint::save(ckpt, config_io::config_string(mc), net.named_tensors());
  std::cout << "best_val_dice=" << res.best_val_dice << "\ncheckpoint=" << ckpt << "\n";
  return 0;
}

int do_infer(const std::string& ckpt_path, const std::string& input, const std::string& output,
             bool gate, double threshold, int batch) {
  auto loaded = checkpoint::load(ckpt_path);
  SegMateConfig mc = config_io::model_from_string(loaded.config_json);
  Network<float> net(mc, 0);
  checkpoint::apply(loaded, net);
  auto vol = smv::read_volume(input);
  auto pred = infer_volume(net, vol, batch,
                           gate ? std::optional<float>(static_cast<float>(threshold))
                                : std::nullopt);
  MaskVolume out;
  out.z = pred.z;
  out.h = pred.h;
  out.w = pred.w;
  out.labels = pred.labels;
  out.num_classes = pred.num_classes;
  out.sz = pred.sz;
  out.sy = pred.sy;
  out.sx = pred.sx;
  smv::write_mask(output, out);
  std::cout << "prediction=" << output << " classes=" << out.num_classes << " grid=" << out.z
            << "x" << out.h << "x" << out.w << "\n";
  return 0;
}

int do_eval(const std::string& pred_path, const std::string& gt_path,
            const std::string& json_path) {
  auto pm = smv::read_mask(pred_path);
  auto gt = smv::read_mask(gt_path);
  PredictionVolume pred;
  pred.z = pm.z;
  pred.h = pm.h;
  pred.w = pm.w;
  pred.labels = pm.labels;
  pred.num_classes = std::max(pm.num_classes, gt.num_classes);
  pred.sz = gt.sz;
  pred.sy = gt.sy;
  pred.sx = gt.sx;
  auto rep = metrics::evaluate_case(pred, gt);
  std::cout << rep.table();
  std::ostringstream kv;
  rep.write_kv(kv);
  std::cout << kv.str();
  if (!json_path.empty()) {
    json per = json::array();
    for (const auto& c : rep.per_class) {
      json e{{"class", c.class_id}, {"name", c.name}, {"dice", c.dice}};
      if (c.hd95_mm) e["hd95_mm"] = *c.hd95_mm;
      per.push_back(e);
    }
    json out{{"per_class", per},
             {"mean_dice", rep.mean_dice},
             {"undefined_hd95", rep.undefined_hd95}};
    if (rep.mean_hd95) out["mean_hd95"] = *rep.mean_hd95;
    write_text(json_path, out.dump(2) + "\n");
  }
  return 0;
}

int do_analyze(const std::string& config_path, bool vanilla, int slices, int batch,
               const std::string& json_path) {
  // without a config, analyze the wide reference preset: that is the regime
  // (heavy encoder, capped decoder) where the asymmetric design pays off
  SegMateConfig mc = SegMateConfig::reference();
  if (!config_path.empty()) mc = config_io::model_from_json(load_json(config_path));
  if (vanilla)
    mc = SegMateConfig::vanilla(mc.encoder_widths, mc.num_classes, mc.input_h, mc.input_w);
  mc.validate();
  Network<float> net(mc, 0);
  auto rep = count_flops(net, batch);
  print_cost_table(rep, slices, std::cout);
  if (!json_path.empty()) write_text(json_path, cost_to_json(rep, slices).dump(2) + "\n");
  return 0;
}

int do_phantom(const std::string& out_dir, int seed, int count, int classes,
               const std::string& grid) {
  data::PhantomSpec spec;
  spec.num_classes = classes;
  if (!grid.empty()) {
    int z, h, w;
    if (std::sscanf(grid.c_str(), "%dx%dx%d", &z, &h, &w) != 3)
      fail(ErrorKind::Usage, "grid must look like 24x48x48 (ZxHxW)");
    spec.z = z;
    spec.h = h;
    spec.w = w;
  }
  auto cases = data::phantom_generate(static_cast<std::uint64_t>(seed), count, spec);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "vol_%03zu", i);
    const auto base = (fs::path(out_dir) / name).string();
    smv::write_volume(base + ".smv", cases[i].vol);
    smv::write_mask(base + "_mask.smv", cases[i].mask);
  }
  std::cout << "wrote " << cases.size() << " volume/mask pairs to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SegMate: efficient 2.5D multi-organ segmentation"};
  app.require_subcommand(1);

  CommonTrainArgs targs;
  auto* train_cmd = app.add_subcommand("train", "train a model on a volume directory");
  train_cmd->add_option("--data", targs.data_dir, "directory of vol/mask .smv pairs")
      ->required();
  train_cmd->add_option("--out", targs.out_dir, "output directory")->required();
  train_cmd->add_option("--config", targs.config_path, "JSON config file");
  train_cmd->add_option("--epochs", targs.epochs, "override epochs");
  train_cmd->add_option("--batch", targs.batch, "override batch size");
  train_cmd->add_option("--lr", targs.lr, "override learning rate");
  train_cmd->add_option("--seed", targs.seed, "override seed");
  train_cmd->add_option("--val-count", targs.val_count, "volumes held out for validation");

  CommonTrainArgs ftargs;
  std::string base_ckpt;
  int frozen_epochs = -1;
  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune from a checkpoint");
  ft_cmd->add_option("--base", base_ckpt, "base checkpoint")->required();
  ft_cmd->add_option("--data", ftargs.data_dir, "directory of vol/mask .smv pairs")->required();
  ft_cmd->add_option("--out", ftargs.out_dir, "output directory")->required();
  ft_cmd->add_option("--config", ftargs.config_path, "JSON config file");
  ft_cmd->add_option("--epochs", ftargs.epochs, "fine-tune epochs (default 25)");
  ft_cmd->add_option("--frozen-epochs", frozen_epochs, "frozen-encoder epochs (default 5)");
  ft_cmd->add_option("--lr", ftargs.lr, "fine-tune learning rate (default 5e-6)");
  ft_cmd->add_option("--batch", ftargs.batch, "override batch size");
  ft_cmd->add_option("--seed", ftargs.seed, "override seed");
  ft_cmd->add_option("--val-count", ftargs.val_count, "volumes held out for validation");

  std::string in_ckpt, in_vol, out_pred;
  bool gate = false;
  double gate_threshold = 0.5;
  int infer_batch = 8;
  auto* infer_cmd = app.add_subcommand("infer", "segment a volume");
  infer_cmd->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  infer_cmd->add_option("--input", in_vol, "input .smv volume")->required();
  infer_cmd->add_option("--output", out_pred, "output .smv mask")->required();
  infer_cmd->add_flag("--gate", gate, "enable presence gating");
  infer_cmd->add_option("--gate-threshold", gate_threshold, "presence gate threshold");
  infer_cmd->add_option("--batch", infer_batch, "slices per forward batch");

  std::string eval_pred, eval_gt, eval_json;
  auto* eval_cmd = app.add_subcommand("eval", "per-organ Dice and HD95 report");
  eval_cmd->add_option("--pred", eval_pred, "predicted .smv mask")->required();
  eval_cmd->add_option("--gt", eval_gt, "ground-truth .smv mask")->required();
  eval_cmd->add_option("--json", eval_json, "also write a JSON report here");

  std::string an_config, an_json;
  bool an_vanilla = false;
  int an_slices = 162, an_batch = 1;
  auto* an_cmd = app.add_subcommand("analyze", "analytical FLOPs/params/memory report");
  an_cmd->add_option("--config", an_config, "JSON config file (defaults otherwise)");
  an_cmd->add_flag("--vanilla", an_vanilla, "mirror the encoder into a vanilla U-Net");
  an_cmd->add_option("--slices", an_slices, "slices per volume for the per-volume total");
  an_cmd->add_option("--batch", an_batch, "batch size for the memory model");
  an_cmd->add_option("--json", an_json, "also write a JSON report here");

  std::string ph_out, ph_grid;
  int ph_seed = 1, ph_count = 10, ph_classes = 4;
  auto* ph_cmd = app.add_subcommand("phantom", "generate synthetic phantom volumes");
  ph_cmd->add_option("--out", ph_out, "output directory")->required();
  ph_cmd->add_option("--seed", ph_seed, "generation seed");
  ph_cmd->add_option("--count", ph_count, "number of volumes");
  ph_cmd->add_option("--classes", ph_classes, "classes incl. background");
  ph_cmd->add_option("--grid", ph_grid, "grid as ZxHxW, e.g. 24x48x48");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return do_train(targs);
    if (*ft_cmd) return do_finetune(ftargs, base_ckpt, frozen_epochs);
    if (*infer_cmd)
      return do_infer(in_ckpt, in_vol, out_pred, gate, gate_threshold, infer_batch);
    if (*eval_cmd) return do_eval(eval_pred, eval_gt, eval_json);
    if (*an_cmd) return do_analyze(an_config, an_vanilla, an_slices, an_batch, an_json);
    if (*ph_cmd) return do_phantom(ph_out, ph_seed, ph_count, ph_classes, ph_grid);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
