#pragma once

// Shared value types: class taxonomy, prompt records, bitemporal samples.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fcd/autograd.hpp"

namespace fcd {

inline constexpr std::uint8_t kIgnoreLabel = 255;

enum class TaskMode { BCD, SCD };

inline std::string to_string(TaskMode m) { return m == TaskMode::BCD ? "BCD" : "SCD"; }

inline TaskMode parse_task_mode(std::string_view s) {
  if (s == "BCD" || s == "bcd") return TaskMode::BCD;
  if (s == "SCD" || s == "scd") return TaskMode::SCD;
  throw std::invalid_argument("unknown task mode: " + std::string(s));
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct ClassInfo {
  int id = 0;
  std::string name;
  std::string brief_prompt;
  Rgb color;
  friend bool operator==(const ClassInfo&, const ClassInfo&) = default;
};

struct ClassTaxonomy {
  TaskMode mode = TaskMode::SCD;
  std::vector<ClassInfo> classes;

  int size() const { return static_cast<int>(classes.size()); }
  friend bool operator==(const ClassTaxonomy&, const ClassTaxonomy&) = default;
};

/// Fixed taxonomies. SCD ids follow the brief-prompt order; colors follow the
/// qualitative-figure legend as pure saturated RGB.
inline ClassTaxonomy default_taxonomy(TaskMode mode) {
  ClassTaxonomy t;
  t.mode = mode;
  if (mode == TaskMode::BCD) {
    t.classes = {
        {0, "No Change", "no change", {0, 0, 0}},
        {1, "Change", "significant land cover change", {255, 255, 255}},
    };
  } else {
    t.classes = {
        {0, "No Change", "no change", {0, 0, 0}},
        {1, "Farmland to Bareland", "farmland change to bareland", {255, 0, 0}},
        {2, "Farmland to Building", "farmland change to building", {0, 255, 0}},
        {3, "Farmland to Road", "farmland change to road", {0, 0, 255}},
        {4, "Farmland to Vegetation", "farmland change to vegetation", {255, 255, 0}},
        {5, "Farmland to Water", "farmland change to water", {255, 0, 255}},
    };
  }
  return t;
}

/// Empty result means the taxonomy is usable.
inline std::vector<std::string> validate_taxonomy(const ClassTaxonomy& t) {
  std::vector<std::string> v;
  if (t.classes.empty() || t.classes.front().id != 0) v.push_back("class id 0 must be the first (no-change) class");
  std::set<std::string> prompts;
  for (std::size_t i = 0; i < t.classes.size(); ++i) {
    const auto& c = t.classes[i];
    if (c.id != static_cast<int>(i)) v.push_back("class ids must be consecutive from 0");
    if (c.brief_prompt.empty()) v.push_back("class " + std::to_string(c.id) + " has an empty brief prompt");
    if (!prompts.insert(c.brief_prompt).second) v.push_back("duplicate brief prompt: " + c.brief_prompt);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Prompt records

enum class Scene { Urban, Suburban, Rural, Forest, Farmland, Water, Mixed, Unknown };
enum class Nuisance { Shadow, Illumination, Season, Misalignment, Cloud, SensorNoise };

inline constexpr std::array<std::string_view, 8> kSceneNames = {"urban",    "suburban", "rural", "forest",
                                                                "farmland", "water",    "mixed", "unknown"};
// Identifier spelling (as stored in sidecars) and prompt spelling.
inline constexpr std::array<std::string_view, 6> kNuisanceIds = {"shadow", "illumination", "season",
                                                                 "misalignment", "cloud", "sensor_noise"};
inline constexpr std::array<std::string_view, 6> kNuisancePhrases = {"shadow", "illumination", "season",
                                                                     "misalignment", "cloud", "sensor noise"};

inline std::string_view scene_name(Scene s) { return kSceneNames[static_cast<int>(s)]; }
inline std::string_view nuisance_id(Nuisance n) { return kNuisanceIds[static_cast<int>(n)]; }
inline std::string_view nuisance_phrase(Nuisance n) { return kNuisancePhrases[static_cast<int>(n)]; }

inline Scene parse_scene(std::string_view s) {
  for (std::size_t i = 0; i < kSceneNames.size(); ++i) {
    if (kSceneNames[i] == s) return static_cast<Scene>(i);
  }
  throw std::invalid_argument("unknown scene: " + std::string(s));
}

/// Accepts both "sensor_noise" and "sensor noise".
inline Nuisance parse_nuisance(std::string_view s) {
  for (std::size_t i = 0; i < kNuisanceIds.size(); ++i) {
    if (kNuisanceIds[i] == s || kNuisancePhrases[i] == s) return static_cast<Nuisance>(i);
  }
  throw std::invalid_argument("unknown nuisance factor: " + std::string(s));
}

struct NuisanceScore {
  Nuisance name = Nuisance::Shadow;
  double confidence = 0.0;
  friend bool operator==(const NuisanceScore&, const NuisanceScore&) = default;
};

struct PromptRecord {
  Scene scene = Scene::Unknown;
  std::vector<NuisanceScore> nuisances;
  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

inline std::vector<std::string> validate_prompt_record(const PromptRecord& r) {
  std::vector<std::string> v;
  std::set<Nuisance> seen;
  for (const auto& n : r.nuisances) {
    if (!(n.confidence >= 0.0 && n.confidence <= 1.0)) {
      v.push_back("nuisance " + std::string(nuisance_id(n.name)) + " confidence outside [0,1]");
    }
    if (!seen.insert(n.name).second) v.push_back("duplicate nuisance " + std::string(nuisance_id(n.name)));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Rasters

/// Interleaved H x W x 3 image with values in [0, 1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  RgbImage() = default;
  RgbImage(int h, int w, float fill = 0.f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int ch) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
  float at(int y, int x, int ch) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct BitemporalSample {
  std::string id;
  RgbImage image_t1;
  RgbImage image_t2;
  LabelMap label;
  std::optional<PromptRecord> prompt;
};

/// Lists every broken invariant; an empty list means downstream modules accept the sample.
inline std::vector<std::string> validate_sample(const BitemporalSample& s, const ClassTaxonomy& t) {
  std::vector<std::string> v;
  const auto& a = s.image_t1;
  const auto& b = s.image_t2;
  if (a.height <= 0 || a.width <= 0) v.push_back("image_t1 is empty");
  if (a.height != b.height || a.width != b.width) {
    v.push_back("shape mismatch: image_t1 " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                " vs image_t2 " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  for (const RgbImage* img : {&a, &b}) {
    if (img->pixels.size() != static_cast<std::size_t>(img->height) * img->width * 3) {
      v.push_back("image buffer size does not match its dimensions");
      continue;
    }
    auto bad = std::find_if(img->pixels.begin(), img->pixels.end(), [](float p) { return !(p >= 0.f && p <= 1.f); });
    if (bad != img->pixels.end()) v.push_back("image value outside [0,1]");
  }
  if (s.label.height != a.height || s.label.width != a.width) {
    v.push_back("label shape " + std::to_string(s.label.height) + "x" + std::to_string(s.label.width) +
                " does not match image shape");
  }
  int max_id = -1;
  std::size_t first_bad = s.label.values.size();
  for (std::size_t i = 0; i < s.label.values.size(); ++i) {
    const int l = s.label.values[i];
    if (l == kIgnoreLabel) continue;
    if (l >= t.size() && first_bad == s.label.values.size()) first_bad = i;
    max_id = std::max(max_id, l);
  }
  if (max_id >= t.size()) {
    v.push_back("pixel class overflow: label value " + std::to_string(max_id) + " >= class count " +
                std::to_string(t.size()) + " (first at index " + std::to_string(first_bad) + ")");
  }
  if (s.prompt) {
    for (auto& e : validate_prompt_record(*s.prompt)) v.push_back("prompt: " + e);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Features

/// Batched feature map (N, C, h, w) with its downsampling factor relative to the input.
template <class T>
struct FeatureMap {
  Var<T> data;
  int scale = 1;

  int channels() const { return data.shape().c; }
  int height() const { return data.shape().h; }
  int width() const { return data.shape().w; }
};

}  // namespace fcd
