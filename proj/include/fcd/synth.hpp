#pragma once

// Deterministic synthetic bitemporal farmland data.
//
// t1 is a field mosaic of striped crop rows with value noise. t2 copies t1,
// paints change objects (rectangles, polylines, blobs) and, on a fraction of
// samples, applies a global colour/illumination jitter that carries no label.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/data_model.hpp"
#include "fcd/dataset.hpp"
#include "fcd/nn.hpp"

namespace fcd {

struct SynthConfig {
  int n_samples = 16;
  int patch_size = 256;
  std::uint64_t seed = 7;
  double pseudo_change_rate = 0.3;
  std::vector<int> shape_classes = {1, 2, 3, 4, 5};
  int min_region_px = 100;
  int n_val = 0;
  int n_test = 0;
  int max_objects = 3;
  TaskMode mode = TaskMode::SCD;

  void validate() const {
    if (n_samples < 1) throw std::invalid_argument("synth: n_samples must be >= 1");
    if (patch_size < 32) throw std::invalid_argument("synth: patch_size must be >= 32");
    if (!(pseudo_change_rate >= 0.0 && pseudo_change_rate <= 1.0)) {
      throw std::invalid_argument("synth: pseudo_change_rate must be in [0,1]");
    }
    if (shape_classes.empty()) throw std::invalid_argument("synth: shape_classes is empty");
    for (int c : shape_classes) {
      if (c < 1 || c > 5) throw std::invalid_argument("synth: shape class " + std::to_string(c) + " not in 1..5");
    }
    if (n_val < 0 || n_test < 0) throw std::invalid_argument("synth: split sizes must be >= 0");
    if (max_objects < 1) throw std::invalid_argument("synth: max_objects must be >= 1");
  }
};

struct SynthSample {
  BitemporalSample sample;
  bool jittered = false;
};

namespace synth_detail {

inline float q8(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

/// Bilinear lattice value noise in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int h, int w, int cell) : cell_(cell), gh_(h / cell + 2), gw_(w / cell + 2) {
    grid_.resize(static_cast<std::size_t>(gh_) * gw_);
    for (auto& g : grid_) g = rng.uniform(-1.0, 1.0);
  }
  double operator()(int y, int x) const {
    const double fy = static_cast<double>(y) / cell_, fx = static_cast<double>(x) / cell_;
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const double ty = fy - y0, tx = fx - x0;
    auto g = [&](int yy, int xx) { return grid_[static_cast<std::size_t>(yy) * gw_ + xx]; };
    return (1 - ty) * ((1 - tx) * g(y0, x0) + tx * g(y0, x0 + 1)) + ty * ((1 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
  }

 private:
  int cell_, gh_, gw_;
  std::vector<double> grid_;
};

struct Paint {
  std::array<double, 3> rgb;
  double noise;
};

inline Paint class_paint(int cls) {
  switch (cls) {
    case 1: return {{0.52, 0.38, 0.27}, 0.05};  // bare soil
    case 2: return {{0.86, 0.84, 0.86}, 0.03};  // roof
    case 3: return {{0.30, 0.30, 0.33}, 0.02};  // asphalt
    case 4: return {{0.10, 0.36, 0.14}, 0.05};  // tree cover
    default: return {{0.08, 0.18, 0.42}, 0.03}; // water
  }
}

inline RgbImage farmland_background(Rng& rng, int size) {
  static const std::array<std::array<double, 3>, 4> crops = {{
      {0.55, 0.66, 0.30}, {0.74, 0.68, 0.40}, {0.45, 0.58, 0.24}, {0.63, 0.60, 0.34}}};
  RgbImage img(size, size);
  ValueNoise noise(rng, size, size, std::max(4, size / 8));
  // two to three parcels split along a random axis, each with its own row direction
  const int parcels = rng.uniform_int(2, 3);
  const bool vertical = rng.bernoulli(0.5);
  std::vector<int> cuts = {0};
  for (int i = 1; i < parcels; ++i) cuts.push_back(size * i / parcels + rng.uniform_int(-size / 10, size / 10));
  cuts.push_back(size);
  struct Parcel {
    std::array<double, 3> base;
    double angle, period, phase;
  };
  std::vector<Parcel> ps;
  for (int i = 0; i < parcels; ++i) {
    ps.push_back({crops[rng.uniform_int(0, 3)], rng.uniform(0, 3.141592653589793), rng.uniform(4.0, 8.0),
                  rng.uniform(0, 6.283185307179586)});
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int coord = vertical ? x : y;
      int p = 0;
      while (p + 1 < parcels && coord >= cuts[p + 1]) ++p;
      const auto& pc = ps[p];
      const double u = x * std::cos(pc.angle) + y * std::sin(pc.angle);
      const double stripe = 0.06 * std::sin(6.283185307179586 * u / pc.period + pc.phase);
      const double n = 0.05 * noise(y, x);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = q8(pc.base[c] + stripe + n);
    }
  return img;
}

inline void stamp(LabelMap& mask, int y, int x) {
  if (y >= 0 && y < mask.height && x >= 0 && x < mask.width) mask.at(y, x) = 1;
}

inline LabelMap rectangle_mask(Rng& rng, int size) {
  LabelMap m(size, size);
  const int h = static_cast<int>(size * rng.uniform(0.16, 0.30));
  const int w = static_cast<int>(size * rng.uniform(0.16, 0.30));
  const int y0 = rng.uniform_int(0, size - h), x0 = rng.uniform_int(0, size - w);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) stamp(m, y, x);
  return m;
}

inline LabelMap polyline_mask(Rng& rng, int size) {
  LabelMap m(size, size);
  const double half = std::max(2.0, size / 28.0);
  const int vertices = rng.uniform_int(2, 3);
  std::vector<std::array<double, 2>> pts;
  for (int i = 0; i <= vertices; ++i) pts.push_back({rng.uniform(0.1, 0.9) * size, rng.uniform(0.1, 0.9) * size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double ax = pts[i][0], ay = pts[i][1], bx = pts[i + 1][0], by = pts[i + 1][1];
        const double dx = bx - ax, dy = by - ay;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = ax + t * dx - x, py = ay + t * dy - y;
        if (px * px + py * py <= half * half) {
          stamp(m, y, x);
          break;
        }
      }
    }
  return m;
}

inline LabelMap blob_mask(Rng& rng, int size) {
  LabelMap m(size, size);
  const double r0 = size * rng.uniform(0.10, 0.18);
  const double cy = rng.uniform(r0, size - r0), cx = rng.uniform(r0, size - r0);
  const int k = rng.uniform_int(2, 4);
  const double amp = rng.uniform(0.1, 0.3), phase = rng.uniform(0, 6.283185307179586);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double r = std::sqrt(dx * dx + dy * dy);
      const double th = std::atan2(dy, dx);
      if (r <= r0 * (1.0 + amp * std::sin(k * th + phase))) stamp(m, y, x);
    }
  return m;
}

inline LabelMap shape_for_class(Rng& rng, int cls, int size) {
  if (cls == 2) return rectangle_mask(rng, size);
  if (cls == 3) return polyline_mask(rng, size);
  return blob_mask(rng, size);
}

}  // namespace synth_detail

/// In-memory generation of one split; `offset` shifts both the ids and the RNG stream.
inline std::vector<SynthSample> synthesize_split(const SynthConfig& cfg, int count, int offset) {
  using namespace synth_detail;
  cfg.validate();
  std::vector<SynthSample> out;
  out.reserve(count);
  const int size = cfg.patch_size;
  for (int i = 0; i < count; ++i) {
    const int index = offset + i;
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL ^ (static_cast<std::uint64_t>(index) + 1) * 0xBF58476D1CE4E5B9ULL);
    SynthSample s;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05d", index);
    s.sample.id = id;
    s.sample.image_t1 = farmland_background(rng, size);
    RgbImage t2 = s.sample.image_t1;
    LabelMap label(size, size, 0);

    const int objects = rng.uniform_int(1, cfg.max_objects);
    for (int o = 0; o < objects; ++o) {
      const int cls = cfg.shape_classes[rng.uniform_int(0, static_cast<int>(cfg.shape_classes.size()) - 1)];
      const LabelMap mask = shape_for_class(rng, cls, size);
      const Paint paint = class_paint(cls);
      ValueNoise tex(rng, size, size, 3);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          if (!mask.at(y, x)) continue;
          label.at(y, x) = static_cast<std::uint8_t>(cls);
          const double n = paint.noise * tex(y, x);
          for (int c = 0; c < 3; ++c) t2.at(y, x, c) = q8(paint.rgb[c] + n);
        }
    }

    // regions that the protocol filter would drop revert to t1 so image and label agree
    const LabelMap filtered = filter_small_regions(label, cfg.min_region_px);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        if (filtered.at(y, x) != label.at(y, x)) {
          for (int c = 0; c < 3; ++c) t2.at(y, x, c) = s.sample.image_t1.at(y, x, c);
        }
      }
    label = filtered;

    s.jittered = rng.bernoulli(cfg.pseudo_change_rate);
    if (s.jittered) {
      const double brightness = rng.uniform(-0.12, 0.12);
      std::array<double, 3> gain;
      for (auto& g : gain) g = rng.uniform(0.8, 1.2);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          for (int c = 0; c < 3; ++c) t2.at(y, x, c) = q8(t2.at(y, x, c) * gain[c] + brightness);
    }
    s.sample.image_t2 = std::move(t2);
    if (cfg.mode == TaskMode::BCD) {
      for (auto& v : label.values) v = v ? 1 : 0;
    }
    s.sample.label = std::move(label);

    PromptRecord prompt;
    prompt.scene = Scene::Farmland;
    if (s.jittered) prompt.nuisances.push_back({Nuisance::Illumination, 0.9});
    s.sample.prompt = prompt;
    out.push_back(std::move(s));
  }
  return out;
}

/// Training split only, in memory.
inline std::vector<SynthSample> synthesize(const SynthConfig& cfg) { return synthesize_split(cfg, cfg.n_samples, 0); }

/// Writes train (and optional val/test) splits under `root`; returns the train manifest.
inline DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("cannot create dataset root " + root.string() + ": " + ec.message());
  write_dataset_mode(root, cfg.mode);
  const std::array<std::pair<Split, int>, 3> splits = {
      {{Split::Train, cfg.n_samples}, {Split::Val, cfg.n_val}, {Split::Test, cfg.n_test}}};
  int offset = 0;
  for (const auto& [split, count] : splits) {
    if (count == 0) continue;
    const fs::path dir = root / split_name(split);
    std::map<std::string, PromptRecord> prompts;
    for (const auto& s : synthesize_split(cfg, count, offset)) {
      save_sample(dir, s.sample);
      prompts[s.sample.id] = *s.sample.prompt;
    }
    save_prompt_sidecar(dir / "prompts.json", prompts);
    offset += count;
  }
  return load_manifest(root, Split::Train);
}

}  // namespace fcd
