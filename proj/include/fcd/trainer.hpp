#pragma once

// Training, evaluation, sweep and ablation drivers.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/checkpoint.hpp"
#include "fcd/config.hpp"
#include "fcd/dataset.hpp"
#include "fcd/image_io.hpp"
#include "fcd/metrics.hpp"
#include "fcd/model.hpp"
#include "fcd/optim.hpp"
#include "fcd/render.hpp"

namespace fcd {

struct EpochLog {
  int epoch = 0;
  int steps = 0;  // optimizer steps so far
  double lr = 0;
  double loss = 0, main = 0, aux = 0;  // epoch means
  double val_f1 = -1;                   // -1 when not validated this epoch
};

struct TrainOptions {
  int validate_every = 1;
  int max_steps = -1;  // stop after this many optimizer steps (<0: no limit)
  std::function<void(const EpochLog&)> on_epoch;
};

template <class T>
struct TrainResult {
  std::unique_ptr<ChangeDetector<T>> model;  // final weights
  Checkpoint best;                           // best validation F1
  Checkpoint last;
  std::vector<EpochLog> log;
};

namespace train_detail {

inline BitemporalSample flipped(const BitemporalSample& s, bool horizontal, bool vertical) {
  BitemporalSample out = s;
  const int h = s.label.height, w = s.label.width;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = vertical ? h - 1 - y : y, sx = horizontal ? w - 1 - x : x;
      out.label.at(y, x) = s.label.at(sy, sx);
      for (int c = 0; c < 3; ++c) {
        out.image_t1.at(y, x, c) = s.image_t1.at(sy, sx, c);
        out.image_t2.at(y, x, c) = s.image_t2.at(sy, sx, c);
      }
    }
  return out;
}

}  // namespace train_detail

struct EvalOptions {
  bool oracle = false;  // substitute ground truth for predictions
  std::filesystem::path render_dir;
  int batch_size = 8;
};

struct EvalResult {
  ConfusionMatrix confusion{2};
  MetricsReport report;
};

template <class T>
EvalResult evaluate_model(const ChangeDetector<T>& model, const std::vector<BitemporalSample>& samples,
                          const EvalOptions& opt = {}) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const ClassTaxonomy& tax = model.taxonomy();
  EvalResult r{ConfusionMatrix(tax.size()), {}};
  if (!opt.render_dir.empty()) std::filesystem::create_directories(opt.render_dir);
  const int bs = std::max(1, opt.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    std::vector<const BitemporalSample*> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + bs); ++i) batch.push_back(&samples[i]);
    std::vector<LabelMap> preds;
    if (opt.oracle) {
      for (const auto* s : batch) {
        LabelMap p = s->label;
        for (auto& v : p.values) v = v == kIgnoreLabel ? 0 : v;
        preds.push_back(std::move(p));
      }
    } else {
      preds = model.predict(batch);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      r.confusion.accumulate(preds[i].values, batch[i]->label.values);
      if (!opt.render_dir.empty()) {
        const auto img = tax.mode == TaskMode::SCD ? render_prediction(preds[i], tax)
                                                   : render_bcd_diff(preds[i], batch[i]->label);
        save_rgb8_png(opt.render_dir / (batch[i]->id + ".png"), img.height, img.width, img.rgb);
      }
    }
  }
  r.report = make_report(r.confusion, tax.mode);
  return r;
}

template <class T>
TrainResult<T> train_model(const TrainConfig& cfg, const ClassTaxonomy& taxonomy,
                           const std::vector<BitemporalSample>& train_set, const std::vector<BitemporalSample>& val_set,
                           const TrainOptions& opt = {}) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& s : train_set) {
    auto problems = validate_sample(s, taxonomy);
    if (!problems.empty()) throw std::invalid_argument("train: sample " + s.id + ": " + problems.front());
  }
  TrainResult<T> res;
  auto text = make_text_encoder(cfg.text_encoder, cfg.model.cmla.text_dim);
  res.model = std::make_unique<ChangeDetector<T>>(cfg.model, taxonomy, text, cfg.seed);
  ChangeDetector<T>& model = *res.model;
  AdamWConfig acfg = cfg.optimizer;
  acfg.lr = cfg.lr;
  AdamW<T> optim(model.params(), acfg);
  Rng aug_rng(cfg.seed ^ 0xA5A5A5A5ULL);
  const std::vector<BitemporalSample>& val = val_set.empty() ? train_set : val_set;
  res.best.best.value = -1;

  int steps = 0;
  const int n = static_cast<int>(train_set.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
    optim.set_lr(lr);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    int batches = 0;
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (int start = 0; start < n; start += cfg.batch_size) {
      if (opt.max_steps >= 0 && steps >= opt.max_steps) break;
      std::vector<BitemporalSample> augmented;
      std::vector<const BitemporalSample*> batch;
      for (int i = start; i < std::min(n, start + cfg.batch_size); ++i) batch.push_back(&train_set[order[i]]);
      if (cfg.augment_flips) {
        augmented.reserve(batch.size());
        for (auto*& b : batch) {
          const bool hf = aug_rng.bernoulli(0.5), vf = aug_rng.bernoulli(0.5);
          augmented.push_back(train_detail::flipped(*b, hf, vf));
          b = &augmented.back();
        }
      }
      std::vector<const LabelMap*> labels;
      for (const auto* b : batch) labels.push_back(&b->label);
      const LabelTensor y = labels_to_tensor(labels);

      model.params().zero_grad();
      auto out = model.forward(batch);
      auto loss = compute_loss(out, y, cfg.loss);
      const double total = static_cast<double>(loss.total.value()[0]);
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << " step " << steps << ": main=" << loss.main
            << " aux=" << loss.aux << " lr=" << lr << " hard_pixels=" << loss.hard_pixels;
        throw std::runtime_error(msg.str());
      }
      backward(loss.total);
      optim.step();
      ++steps;
      ++batches;
      log.loss += total;
      log.main += loss.main;
      log.aux += loss.aux;
    }
    if (batches > 0) {
      log.loss /= batches;
      log.main /= batches;
      log.aux /= batches;
    }
    log.steps = steps;
    const bool last_epoch = epoch + 1 == cfg.epochs || (opt.max_steps >= 0 && steps >= opt.max_steps);
    if (last_epoch || (opt.validate_every > 0 && (epoch + 1) % opt.validate_every == 0)) {
      EvalOptions eo;
      eo.batch_size = cfg.batch_size;
      const auto ev = evaluate_model(model, val, eo);
      log.val_f1 = ev.report.binary.f1;
      if (log.val_f1 > res.best.best.value) {
        res.best = make_checkpoint(model, cfg, epoch, BestRecord{"f1", log.val_f1, epoch});
      }
    }
    res.log.push_back(log);
    if (opt.on_epoch) opt.on_epoch(log);
    if (last_epoch) {
      res.last = make_checkpoint(model, cfg, epoch, res.best.best);
      break;
    }
  }
  return res;
}

/// Loads the train split (and val, when present) from disk and trains.
template <class T>
TrainResult<T> train(const TrainConfig& cfg, const DatasetManifest& train_manifest, const TrainOptions& opt = {}) {
  if (train_manifest.entries.empty()) throw std::invalid_argument("train: manifest has no entries");
  std::vector<BitemporalSample> val;
  const auto val_manifest = load_manifest(train_manifest.root, Split::Val);
  if (!val_manifest.entries.empty()) val = load_all(val_manifest);
  return train_model<T>(cfg, train_manifest.taxonomy, load_all(train_manifest), val, opt);
}

template <class T>
EvalResult evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest, const EvalOptions& opt = {}) {
  if (!(ckpt.taxonomy == manifest.taxonomy)) {
    throw std::invalid_argument("evaluate: checkpoint taxonomy (" + to_string(ckpt.taxonomy.mode) +
                                ") does not match dataset taxonomy (" + to_string(manifest.taxonomy.mode) + ")");
  }
  auto model = model_from_checkpoint<T>(ckpt);
  return evaluate_model(*model, load_all(manifest), opt);
}

// ---------------------------------------------------------------------------
// Sweep and ablation

struct SweepRow {
  double tau = 0, lambda = 0;
  double f1 = 0, iou = 0, oa = 0;
};

inline std::vector<std::pair<double, double>> default_sweep_grid() {
  return {{0.80, 0.30}, {0.80, 0.40}, {0.80, 0.50}, {0.80, 0.60}, {0.85, 0.40}, {0.75, 0.40}};
}

struct ExperimentData {
  ClassTaxonomy taxonomy;
  std::vector<BitemporalSample> train;
  std::vector<BitemporalSample> eval;  // empty -> evaluate on train
};

template <class T>
std::vector<SweepRow> sweep_tau_lambda(const TrainConfig& base, const std::vector<std::pair<double, double>>& grid,
                                       const ExperimentData& data, const TrainOptions& opt = {}) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  std::vector<SweepRow> rows;
  for (const auto& [tau, lambda] : grid) {
    TrainConfig cfg = base;
    cfg.loss.tau = tau;
    cfg.loss.lambda_aux = lambda;
    auto res = train_model<T>(cfg, data.taxonomy, data.train, data.eval, opt);
    auto model = model_from_checkpoint<T>(res.best);
    const auto ev = evaluate_model(*model, data.eval.empty() ? data.train : data.eval);
    rows.push_back({tau, lambda, ev.report.binary.f1, ev.report.binary.iou, ev.report.binary.oa});
  }
  return rows;
}

struct AblationRow {
  std::string name;
  bool msde = false, dpse = false, drsa = false;
  std::size_t params = 0;
  double f1 = 0, iou = 0, fscd = 0;
};

inline std::vector<AblationRow> ablation_rows() {
  return {{"baseline", false, false, false},
          {"DPSE+DRSA", false, true, true},
          {"MSDE+DRSA", true, false, true},
          {"MSDE+DPSE", true, true, false},
          {"MSDE+DPSE+DRSA", true, true, true}};
}

template <class T>
std::vector<AblationRow> ablate_decoder(const TrainConfig& base, const ExperimentData& data,
                                        const TrainOptions& opt = {}) {
  auto rows = ablation_rows();
  for (auto& r : rows) {
    TrainConfig cfg = base;
    cfg.model.msde = r.msde;
    cfg.model.dpse = r.dpse;
    cfg.model.drsa = r.drsa;
    auto res = train_model<T>(cfg, data.taxonomy, data.train, data.eval, opt);
    auto model = model_from_checkpoint<T>(res.best);
    r.params = model->count_parameters();
    const auto ev = evaluate_model(*model, data.eval.empty() ? data.train : data.eval);
    r.f1 = ev.report.binary.f1;
    r.iou = ev.report.binary.iou;
    r.fscd = ev.report.scd ? ev.report.scd->fscd : 0.0;
  }
  return rows;
}

inline std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "| tau | lambda | F1 | IoU | OA |\n|---|---|---|---|---|\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %.2f | %.2f | %.2f | %.2f | %.2f |\n", r.tau, r.lambda, 100 * r.f1, 100 * r.iou,
                  100 * r.oa);
    os << buf;
  }
  return os.str();
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| variant | MSDE | DPSE | DRSA | params | F1 | IoU | F_scd |\n|---|---|---|---|---|---|---|---|\n";
  char buf[200];
  auto mark = [](bool b) { return b ? "x" : " "; };
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %s | %s | %s | %zu | %.2f | %.2f | %.2f |\n", r.name.c_str(), mark(r.msde),
                  mark(r.dpse), mark(r.drsa), r.params, 100 * r.f1, 100 * r.iou, 100 * r.fscd);
    os << buf;
  }
  return os.str();
}

}  // namespace fcd
