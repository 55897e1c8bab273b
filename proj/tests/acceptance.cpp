// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "fcd/fcd.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fcd;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

LabelTensor random_labels(Shape s, int K, Rng& rng) {
  LabelTensor l(Shape{s.n, 1, s.h, s.w});
  for (auto& v : l.vec()) v = rng.bernoulli(0.1) ? kIgnoreLabel : static_cast<std::uint8_t>(rng.uniform_int(0, K - 1));
  return l;
}

ModelConfig micro_model() {
  ModelConfig m;
  m.encoder.stage_channels = {4, 8, 12, 16};
  m.encoder.depth = 1;
  m.encoder.state_dim = 2;
  m.decoder_channels = {4, 4, 4, 4};
  m.cmla.text_dim = 8;
  return m;
}

Outcome a1_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  ChangeDetector<double> model(micro_model(), default_taxonomy(TaskMode::SCD), make_text_encoder("stub", 8), 1);
  Rng rng(2);
  // a zero gate would hide its own gradient path
  for (auto& p : model.params().params()) {
    if (p.name.rfind("cmla.gate", 0) == 0) {
      for (auto& v : p.var.mutable_value().vec()) v = rng.uniform(-0.5, 0.5);
    }
  }
  Var<double> t1(fcd::testing::random_tensor({1, 3, 32, 32}, rng), true);
  Var<double> t2(fcd::testing::random_tensor({1, 3, 32, 32}, rng), true);
  const std::vector<std::string> prompts{build_input_prompt({Scene::Farmland, {{Nuisance::Shadow, 0.9}}})};
  std::vector<Var<double>> leaves{t1, t2};
  for (auto& p : model.params().params()) leaves.push_back(p.var);
  const auto rep = fcd::testing::gradcheck(
      [&] {
        const auto out = model.forward(t1, t2, prompts);
        return add(fcd::testing::random_projection(out.logits, 11), fcd::testing::random_projection(out.scores, 12));
      },
      leaves, 3, rng, 1e-4, 1e-5);
  const double secs = seconds_since(t0);
  o.check(rep.coords >= 200, "only " + std::to_string(rep.coords) + " coordinates");
  o.check(rep.max_rel_err < 1e-4, fmt("max rel err %.3g", rep.max_rel_err));
  o.check(secs < 120, fmt("%.1fs", secs));
  o.detail = (o.pass ? "" : o.detail + " | ") +
             fmt("coords=%.0f max_rel_err=%.2e time=%.1fs", rep.coords, rep.max_rel_err, secs);
  return o;
}

Outcome a2_losses() {
  Outcome o;
  Rng rng(3);
  LossConfig cfg;
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s{1, 6, 16, 16};
    const auto logits = fcd::testing::random_tensor(s, rng, -4, 4);
    const auto scores = fcd::testing::random_tensor(s, rng, -6, 6);
    const auto labels = random_labels(s, 6, rng);
    worst = std::max(worst, std::abs(main_loss(constant(logits), labels, cfg).value.value()[0] -
                                     oracle::main_loss(logits, labels, cfg)));
    const auto mask = hard_mask(logits, labels, cfg);
    o.check(mask.vec() == oracle::hard_mask(logits, labels, cfg).vec(), "hard mask differs in case " +
                                                                            std::to_string(trial));
    worst = std::max(worst, std::abs(aux_loss(constant(scores), labels, mask, cfg).value()[0] -
                                     oracle::aux_loss(scores, labels, mask, cfg)));
  }
  o.check(worst < 1e-6, fmt("max loss diff %.3g", worst));
  Tensor<double> probs(Shape{1, 6, 1, 1}, 0.04);
  probs[0] = 0.80;
  const LabelTensor y(Shape{1, 1, 1, 1}, 0);
  o.check(hard_mask_from_probabilities(probs, y, cfg)[0] == 0, "p_max = 0.80 counted as hard");
  if (o.pass) o.detail = fmt("50 cases, max diff %.2e", worst);
  return o;
}

Outcome a3_metrics() {
  Outcome o;
  Rng rng(4);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int K = trial % 2 ? 6 : 2;
    std::vector<std::uint8_t> pred, gt;
    for (int i = 0; i < 256; ++i) {
      pred.push_back(static_cast<std::uint8_t>(rng.bernoulli(0.4) ? 0 : rng.uniform_int(0, K - 1)));
      gt.push_back(rng.bernoulli(0.1) ? kIgnoreLabel
                                      : static_cast<std::uint8_t>(rng.bernoulli(0.4) ? 0 : rng.uniform_int(0, K - 1)));
    }
    ConfusionMatrix cm(K);
    cm.accumulate(pred, gt);
    const auto b = binary_metrics(cm);
    const auto ob = oracle::binary(pred, gt);
    for (auto [x, y] : {std::pair{b.precision, ob.precision}, {b.recall, ob.recall}, {b.f1, ob.f1}, {b.iou, ob.iou},
                        {b.oa, ob.oa}})
      worst = std::max(worst, std::abs(x - y));
    if (K > 2) {
      const auto s = scd_metrics(cm);
      const auto os = oracle::semantic(pred, gt, K);
      for (auto [x, y] : {std::pair{s.fscd, os.fscd}, {s.sek, os.sek}, {s.scd_iou_mean, os.scd_iou_mean}})
        worst = std::max(worst, std::abs(x - y));
    }
  }
  o.check(worst < 1e-9, fmt("max metric diff %.3g", worst));
  ConfusionMatrix hand(2);
  hand.accumulate(std::vector<std::uint8_t>{1, 1, 1, 0}, std::vector<std::uint8_t>{1, 0, 1, 0});
  const auto m = binary_metrics(hand);
  o.check(m.precision == 2.0 / 3.0 && m.recall == 1.0 && m.f1 == 0.8 && m.iou == 2.0 / 3.0 && m.oa == 0.75,
          "hand example mismatch");
  if (o.pass) o.detail = fmt("100 cases, max diff %.2e; hand example exact", worst);
  return o;
}

Outcome a4_overfit() {
  Outcome o;
  const auto t0 = Clock::now();
  SynthConfig s;
  s.n_samples = 16;
  s.seed = 7;
  s.patch_size = 96;
  std::vector<BitemporalSample> data;
  for (auto& x : synthesize(s)) data.push_back(std::move(x.sample));
  TrainConfig cfg = preset_config("small");
  cfg.text_encoder = "stub";
  TrainOptions opt;
  opt.max_steps = 200;
  opt.validate_every = 10;
  const auto tax = default_taxonomy(TaskMode::SCD);
  auto res = train_model<float>(cfg, tax, data, {}, opt);
  auto model = model_from_checkpoint<float>(res.best);
  const auto ev = evaluate_model(*model, data);
  const double f1 = ev.report.binary.f1, iou = ev.report.scd->scd_iou_mean, secs = seconds_since(t0);
  o.check(res.log.back().steps <= 200, "more than 200 steps");
  o.check(f1 >= 0.95, fmt("F1 %.4f < 0.95", f1));
  o.check(iou >= 0.80, fmt("scd_iou_mean %.4f < 0.80", iou));
  o.check(secs < 600, fmt("%.0fs", secs));
  o.detail = (o.pass ? "" : o.detail + " | ") +
             fmt("F1=%.4f scd_iou_mean=%.4f", f1, iou) + fmt(" steps=%.0f time=%.1fs", res.log.back().steps, secs);
  return o;
}

Outcome a5_gate_neutral() {
  Outcome o;
  const auto cfg = preset_config("small");
  ChangeDetector<float> model(cfg.model, default_taxonomy(TaskMode::SCD), make_text_encoder("stub", 512), 5);
  Rng rng(6);
  int same = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto a = constant(fcd::testing::random_tensor({1, 3, 64, 64}, rng).cast<float>());
    auto b = constant(fcd::testing::random_tensor({1, 3, 64, 64}, rng).cast<float>());
    PromptRecord r{static_cast<Scene>(trial % kSceneNames.size()), {{Nuisance::Cloud, rng.uniform()}}};
    const auto gated = model.forward(a, b, {build_input_prompt(r)}).logits.value();
    const auto plain = model.forward_ungated(a, b).value();
    same += argmax_map(gated, 0) == argmax_map(plain, 0);
  }
  o.check(same == 20, std::to_string(20 - same) + " of 20 inputs differ");
  if (o.pass) o.detail = "20/20 identical argmax maps";
  return o;
}

Outcome a6_prompts() {
  Outcome o;
  o.check(build_input_prompt({Scene::Suburban, {{Nuisance::Shadow, 0.7}}}) ==
              "Satellite image of suburban area. Ignore shadow.",
          "suburban exemplar");
  o.check(build_input_prompt({Scene::Suburban, {{Nuisance::Shadow, 0.5}}}) ==
              "Satellite image of suburban area. Clear conditions.",
          "0.5 must not pass the gate");
  o.check(build_input_prompt({Scene::Mixed, {{Nuisance::Season, 0.9}, {Nuisance::Cloud, 0.6}}}) ==
              "Satellite image of mixed area. Ignore season, cloud.",
          "multi-nuisance");
  const std::vector<std::string> scd = {"no change",
                                        "farmland change to bareland",
                                        "farmland change to building",
                                        "farmland change to road",
                                        "farmland change to vegetation",
                                        "farmland change to water"};
  const std::vector<std::string> bcd = {"no change", "significant land cover change"};
  o.check(build_brief_prompts(default_taxonomy(TaskMode::SCD)) == scd, "SCD brief prompts");
  o.check(build_brief_prompts(default_taxonomy(TaskMode::BCD)) == bcd, "BCD brief prompts");
  if (o.pass) o.detail = "goldens, strict gate, fallback and brief lists match";
  return o;
}

Outcome a7_protocol() {
  Outcome o;
  LabelMap l(64, 64, 0);
  for (int i = 0; i < 99; ++i) l.at(2 + i / 10, 2 + i % 10) = 1;
  for (int i = 0; i < 100; ++i) l.at(30 + i / 10, 30 + i % 10) = 2;
  const auto f = filter_small_regions(l, 100);
  int ones = 0, twos = 0;
  for (auto v : f.values) {
    ones += v == 1;
    twos += v == 2;
  }
  o.check(ones == 0, "99-px component survived");
  o.check(twos == 100, "100-px component removed");

  Rng rng(8);
  RgbImage im(512, 512);
  for (auto& v : im.pixels) v = static_cast<float>(rng.uniform());
  const auto patches = crop_to_patches(im, 256);
  o.check(patches.size() == 4 && reassemble_patches(patches, 512, 512, 256) == im, "crop/reassemble identity");

  StubTextEncoder enc(64);
  const auto prompts = build_brief_prompts(default_taxonomy(TaskMode::SCD));
  const auto p1 = category_prototypes<double>(prompts, enc), p2 = category_prototypes<double>(prompts, enc);
  o.check(p1.matrix.vec() == p2.matrix.vec(), "prototypes not memoized bit-identically");

  ParamStore<double> ps(9);
  CmlaConfig cc;
  cc.text_dim = 64;
  cc.alpha_init = 0.0;
  Cmla<double> cmla(ps, 4, 6, cc);
  auto delta = constant(fcd::testing::random_tensor({1, 64, 1, 1}, rng));
  o.check(cmla.adapt_prototypes(p1, delta).value().vec() == p1.matrix.vec(), "alpha = 0 is not an identity");
  if (o.pass) o.detail = "filter, crop, memo and alpha=0 identity hold";
  return o;
}

Outcome a8_harness() {
  Outcome o;
  SynthConfig s;
  s.n_samples = 2;
  s.patch_size = 32;
  s.min_region_px = 20;
  ExperimentData data{default_taxonomy(TaskMode::SCD), {}, {}};
  for (auto& x : synthesize(s)) data.train.push_back(std::move(x.sample));
  TrainConfig cfg;
  cfg.model = micro_model();
  cfg.model.cmla.text_dim = 16;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.lr = 1e-2;

  const auto sweep = sweep_tau_lambda<float>(cfg, default_sweep_grid(), data);
  const std::vector<std::pair<double, double>> grid = {{0.80, 0.30}, {0.80, 0.40}, {0.80, 0.50},
                                                       {0.80, 0.60}, {0.85, 0.40}, {0.75, 0.40}};
  o.check(sweep.size() == 6, "sweep rows " + std::to_string(sweep.size()));
  for (std::size_t i = 0; i < std::min<std::size_t>(6, sweep.size()); ++i) {
    o.check(sweep[i].tau == grid[i].first && sweep[i].lambda == grid[i].second, "sweep row " + std::to_string(i));
  }

  const auto rows = ablate_decoder<float>(cfg, data);
  o.check(rows.size() == 5, "ablation rows " + std::to_string(rows.size()));
  for (const auto& a : rows)
    for (const auto& b : rows) {
      const bool subset = (!a.msde || b.msde) && (!a.dpse || b.dpse) && (!a.drsa || b.drsa);
      if (subset && a.params > b.params) o.check(false, a.name + " has more parameters than " + b.name);
      if (subset && &a != &b && a.params == b.params) o.check(false, a.name + " and " + b.name + " share a count");
    }

  ChangeDetector<float> model(cfg.model, data.taxonomy, make_text_encoder("stub", 16), 4);
  const auto back = model_from_checkpoint<float>(deserialize_checkpoint(serialize_checkpoint(make_checkpoint(model, cfg, 0))));
  std::vector<const BitemporalSample*> batch{&data.train[0], &data.train[1]};
  const auto x = model.forward(batch).logits.value(), y = back->forward(batch).logits.value();
  double diff = 0;
  for (std::size_t i = 0; i < x.size(); ++i) diff = std::max(diff, std::abs(static_cast<double>(x[i] - y[i])));
  o.check(diff <= 1e-6, fmt("checkpoint output diff %.3g", diff));
  if (o.pass) {
    o.detail = "6 sweep rows, 5 ablation rows, params " + std::to_string(rows.front().params) + " -> " +
               std::to_string(rows.back().params) + fmt(", round-trip diff %.1e", diff);
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"A1", a1_gradients}, {"A2", a2_losses},      {"A3", a3_metrics},  {"A4", a4_overfit},
      {"A5", a5_gate_neutral}, {"A6", a6_prompts}, {"A7", a7_protocol}, {"A8", a8_harness},
  };
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("%s %s %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
