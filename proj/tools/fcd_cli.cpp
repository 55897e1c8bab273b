// fcd: command-line front end for training, evaluation and data generation.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fcd/fcd.hpp"

namespace fs = std::filesystem;
using namespace fcd;

namespace {

TrainConfig resolve_config(const std::string& path, const std::string& preset, const std::vector<std::string>& overrides) {
  TrainConfig cfg = path.empty() ? preset_config(preset) : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

ExperimentData load_experiment(const fs::path& root) {
  ExperimentData d;
  const auto train = load_manifest(root, Split::Train);
  if (train.entries.empty()) throw std::runtime_error("no training samples under " + root.string());
  d.taxonomy = train.taxonomy;
  d.train = load_all(train);
  for (Split s : {Split::Val, Split::Test}) {
    const auto m = load_manifest(root, s);
    if (!m.entries.empty()) {
      d.eval = load_all(m);
      break;
    }
  }
  return d;
}

void print_log(const EpochLog& l) {
  std::printf("epoch %3d  steps %5d  lr %.3g  loss %.4f  main %.4f  aux %.4f", l.epoch, l.steps, l.lr, l.loss, l.main,
              l.aux);
  if (l.val_f1 >= 0) std::printf("  val_f1 %.4f", l.val_f1);
  std::printf("\n");
  std::fflush(stdout);
}

std::vector<std::pair<double, double>> parse_grid(const std::string& s) {
  if (s.empty() || s == "default") return default_sweep_grid();
  std::vector<std::pair<double, double>> grid;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto colon = cell.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("grid cell must be tau:lambda, got " + cell);
    grid.emplace_back(std::stod(cell.substr(0, colon)), std::stod(cell.substr(colon + 1)));
  }
  return grid;
}

PromptRecord read_prompt_arg(const std::string& arg) {
  if (arg.empty()) return {};
  nlohmann::json j;
  if (!arg.empty() && arg.front() == '{') {
    j = nlohmann::json::parse(arg);
  } else {
    std::ifstream in(arg);
    if (!in) throw std::runtime_error("cannot open prompt file " + arg);
    in >> j;
  }
  return prompt_from_json(j);
}

RgbImage pad_to(const RgbImage& img, int h, int w) {
  RgbImage out(h, w, 0.f);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bitemporal farmland change detection"};
  app.require_subcommand(1);

  // train
  std::string cfg_path, preset = "synthetic", data_dir, out_dir;
  std::vector<std::string> overrides;
  int max_steps = -1;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints");
  train_cmd->add_option("--config", cfg_path, "key = value config file");
  train_cmd->add_option("--preset", preset, "preset used when no config file is given (full|default|synthetic|small)");
  train_cmd->add_option("--set", overrides, "override a config key, key=value");
  train_cmd->add_option("--data", data_dir, "dataset root")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--max-steps", max_steps, "stop after this many optimizer steps");

  // eval
  std::string ckpt_path, report_path, render_dir, split = "test";
  bool oracle = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path)->required();
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--report", report_path, "JSON report path")->required();
  eval_cmd->add_option("--render", render_dir, "write rendered predictions here");
  eval_cmd->add_option("--split", split, "train|val|test");
  eval_cmd->add_flag("--oracle", oracle, "use ground truth as prediction");

  // predict
  std::string t1_path, t2_path, prompt_arg, out_img;
  auto* predict_cmd = app.add_subcommand("predict", "Predict a change map for one image pair");
  predict_cmd->add_option("--ckpt", ckpt_path)->required();
  predict_cmd->add_option("--t1", t1_path)->required();
  predict_cmd->add_option("--t2", t2_path)->required();
  predict_cmd->add_option("--prompt", prompt_arg, "prompt record as a JSON file or inline JSON");
  predict_cmd->add_option("--out", out_img)->required();

  // make-synth
  SynthConfig sc;
  std::string mode = "SCD";
  auto* synth_cmd = app.add_subcommand("make-synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--out", out_dir)->required();
  synth_cmd->add_option("--n", sc.n_samples, "training samples")->default_val(16);
  synth_cmd->add_option("--seed", sc.seed)->default_val(7);
  synth_cmd->add_option("--pseudo-rate", sc.pseudo_change_rate)->default_val(0.3);
  synth_cmd->add_option("--patch", sc.patch_size)->default_val(256);
  synth_cmd->add_option("--n-val", sc.n_val)->default_val(0);
  synth_cmd->add_option("--n-test", sc.n_test)->default_val(0);
  synth_cmd->add_option("--min-region", sc.min_region_px)->default_val(100);
  synth_cmd->add_option("--mode", mode, "SCD|BCD")->default_val("SCD");

  // sweep
  std::string grid_arg = "default", table_path;
  int epochs_override = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "Hard-mask (tau, lambda) sweep");
  sweep_cmd->add_option("--grid", grid_arg, "tau:lambda,tau:lambda,... or 'default'");
  sweep_cmd->add_option("--config", cfg_path);
  sweep_cmd->add_option("--preset", preset);
  sweep_cmd->add_option("--set", overrides);
  sweep_cmd->add_option("--data", data_dir)->required();
  sweep_cmd->add_option("--epochs", epochs_override, "override epochs per run");
  sweep_cmd->add_option("--table", table_path, "write the markdown table here");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Decoder component ablation");
  ablate_cmd->add_option("--config", cfg_path);
  ablate_cmd->add_option("--preset", preset);
  ablate_cmd->add_option("--set", overrides);
  ablate_cmd->add_option("--data", data_dir)->required();
  ablate_cmd->add_option("--epochs", epochs_override, "override epochs per run");
  ablate_cmd->add_option("--table", table_path, "write the markdown table here");

  // params
  auto* params_cmd = app.add_subcommand("params", "Count trainable parameters");
  params_cmd->add_option("--ckpt", ckpt_path);
  params_cmd->add_option("--preset", preset);
  params_cmd->add_option("--set", overrides);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      TrainConfig cfg = resolve_config(cfg_path, preset, overrides);
      const auto manifest = load_manifest(data_dir, Split::Train);
      for (const auto& r : manifest.rejects) std::fprintf(stderr, "reject: %s\n", r.c_str());
      TrainOptions opt;
      opt.max_steps = max_steps;
      fs::create_directories(out_dir);
      std::ofstream log_file(fs::path(out_dir) / "train_log.jsonl");
      opt.on_epoch = [&](const EpochLog& l) {
        print_log(l);
        log_file << nlohmann::json{{"epoch", l.epoch}, {"steps", l.steps}, {"lr", l.lr}, {"loss", l.loss},
                                   {"main", l.main}, {"aux", l.aux}, {"val_f1", l.val_f1}}
                        .dump()
                 << "\n";
      };
      auto res = train<float>(cfg, manifest, opt);
      save_checkpoint(fs::path(out_dir) / "best.ckpt", res.best);
      save_checkpoint(fs::path(out_dir) / "last.ckpt", res.last);
      std::ofstream(fs::path(out_dir) / "config.txt") << format_config(cfg);
      std::printf("best val F1 %.4f at epoch %d; %zu parameters\n", res.best.best.value, res.best.best.epoch,
                  res.model->count_parameters());
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const auto manifest = load_manifest(data_dir, parse_split(split));
      if (manifest.entries.empty()) throw std::runtime_error("no samples in split " + split);
      EvalOptions eo;
      eo.oracle = oracle;
      eo.render_dir = render_dir;
      eo.batch_size = ckpt.config.batch_size;
      const auto r = evaluate<float>(ckpt, manifest, eo);
      const auto j = r.report.to_json();
      std::ofstream(report_path) << j.dump(2) << "\n";
      std::printf("%s\n", j.dump(2).c_str());
    } else if (*predict_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      auto model = model_from_checkpoint<float>(ckpt);
      BitemporalSample s;
      s.id = "input";
      s.image_t1 = load_rgb_png(t1_path);
      s.image_t2 = load_rgb_png(t2_path);
      if (s.image_t1.height != s.image_t2.height || s.image_t1.width != s.image_t2.width) {
        throw std::invalid_argument("t1 and t2 differ in size");
      }
      s.prompt = read_prompt_arg(prompt_arg);
      const int h = s.image_t1.height, w = s.image_t1.width;
      const int ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
      s.image_t1 = pad_to(s.image_t1, ph, pw);
      s.image_t2 = pad_to(s.image_t2, ph, pw);
      const LabelMap full = model->predict({&s}).front();
      LabelMap pred(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) pred.at(y, x) = full.at(y, x);
      const auto img = render_prediction(pred, model->taxonomy());
      save_rgb8_png(out_img, img.height, img.width, img.rgb);
    } else if (*synth_cmd) {
      sc.mode = parse_task_mode(mode);
      const auto m = generate_synthetic(sc, out_dir);
      std::printf("wrote %zu training samples to %s\n", m.entries.size(), out_dir.c_str());
    } else if (*sweep_cmd || *ablate_cmd) {
      TrainConfig cfg = resolve_config(cfg_path, preset, overrides);
      if (epochs_override > 0) cfg.epochs = epochs_override;
      const ExperimentData data = load_experiment(data_dir);
      TrainOptions opt;
      opt.validate_every = 0;
      std::string table;
      if (*sweep_cmd) {
        table = format_sweep_table(sweep_tau_lambda<float>(cfg, parse_grid(grid_arg), data, opt));
      } else {
        table = format_ablation_table(ablate_decoder<float>(cfg, data, opt));
      }
      std::printf("%s", table.c_str());
      if (!table_path.empty()) std::ofstream(table_path) << table;
    } else if (*params_cmd) {
      if (!ckpt_path.empty()) {
        std::printf("%zu\n", load_checkpoint(ckpt_path).parameter_count());
      } else {
        const TrainConfig cfg = resolve_config("", preset, overrides);
        auto text = make_text_encoder(cfg.text_encoder, cfg.model.cmla.text_dim);
        ChangeDetector<float> model(cfg.model, default_taxonomy(TaskMode::SCD), text, cfg.seed);
        std::printf("%zu\n", model.count_parameters());
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
