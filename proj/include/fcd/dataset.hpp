#pragma once

// Dataset preparation and on-disk layout:
//   root/{train,val,test}/{A,B,label}/<id>.png
//   root/<split>/prompts.json   id -> {"scene": s, "nuisances": [{"name": n, "confidence": c}]}
//   root/meta.json              {"mode": "SCD" | "BCD"}   (optional, SCD when absent)

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcd/data_model.hpp"
#include "fcd/image_io.hpp"
#include "fcd/nn.hpp"

namespace fcd {

enum class Split { Train, Val, Test };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + s);
}

// ---------------------------------------------------------------------------
// Patching

/// Row-major non-overlapping patches. Inputs whose sides are not multiples of
/// `patch` are padded on the bottom/right with `pad`.
template <class V>
std::vector<std::vector<V>> crop_planes(const std::vector<V>& data, int h, int w, int channels, int patch, V pad) {
  if (patch <= 0) throw std::invalid_argument("crop_to_patches: patch size must be positive");
  const int rows = (h + patch - 1) / patch;
  const int cols = (w + patch - 1) / patch;
  std::vector<std::vector<V>> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      std::vector<V> p(static_cast<std::size_t>(patch) * patch * channels, pad);
      for (int y = 0; y < patch; ++y) {
        const int sy = r * patch + y;
        if (sy >= h) break;
        for (int x = 0; x < patch; ++x) {
          const int sx = c * patch + x;
          if (sx >= w) break;
          for (int ch = 0; ch < channels; ++ch) {
            p[(static_cast<std::size_t>(y) * patch + x) * channels + ch] =
                data[(static_cast<std::size_t>(sy) * w + sx) * channels + ch];
          }
        }
      }
      out.push_back(std::move(p));
    }
  return out;
}

template <class V>
std::vector<V> reassemble_planes(const std::vector<std::vector<V>>& patches, int h, int w, int channels, int patch) {
  if (patch <= 0) throw std::invalid_argument("reassemble: patch size must be positive");
  const int rows = (h + patch - 1) / patch;
  const int cols = (w + patch - 1) / patch;
  if (patches.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("reassemble: expected " + std::to_string(rows * cols) + " patches");
  }
  std::vector<V> out(static_cast<std::size_t>(h) * w * channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto& p = patches[static_cast<std::size_t>(y / patch) * cols + x / patch];
      for (int ch = 0; ch < channels; ++ch) {
        out[(static_cast<std::size_t>(y) * w + x) * channels + ch] =
            p[(static_cast<std::size_t>(y % patch) * patch + x % patch) * channels + ch];
      }
    }
  return out;
}

inline std::vector<LabelMap> crop_to_patches(const LabelMap& label, int patch) {
  std::vector<LabelMap> out;
  for (auto& p : crop_planes<std::uint8_t>(label.values, label.height, label.width, 1, patch, kIgnoreLabel)) {
    LabelMap m(patch, patch);
    m.values = std::move(p);
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<RgbImage> crop_to_patches(const RgbImage& img, int patch) {
  std::vector<RgbImage> out;
  for (auto& p : crop_planes<float>(img.pixels, img.height, img.width, 3, patch, 0.f)) {
    RgbImage m(patch, patch);
    m.pixels = std::move(p);
    out.push_back(std::move(m));
  }
  return out;
}

inline LabelMap reassemble_patches(const std::vector<LabelMap>& patches, int h, int w, int patch) {
  std::vector<std::vector<std::uint8_t>> planes;
  for (const auto& p : patches) planes.push_back(p.values);
  LabelMap out(h, w);
  out.values = reassemble_planes(planes, h, w, 1, patch);
  return out;
}

inline RgbImage reassemble_patches(const std::vector<RgbImage>& patches, int h, int w, int patch) {
  std::vector<std::vector<float>> planes;
  for (const auto& p : patches) planes.push_back(p.pixels);
  RgbImage out(h, w);
  out.pixels = reassemble_planes(planes, h, w, 3, patch);
  return out;
}

// ---------------------------------------------------------------------------
// Small-region filtering

/// Relabels every 8-connected same-class change component smaller than
/// `min_px` pixels to 0. Class 0 and ignore pixels are left as they are.
inline LabelMap filter_small_regions(const LabelMap& label, int min_px) {
  LabelMap out = label;
  const int h = label.height, w = label.width;
  std::vector<std::uint8_t> visited(label.values.size(), 0);
  std::vector<int> component;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    const std::uint8_t cls = label.values[start];
    if (visited[start] || cls == 0 || cls == kIgnoreLabel) continue;
    component.clear();
    stack.assign(1, start);
    visited[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const int py = p / w, px = p % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = py + dy, nx = px + dx;
          if ((dy == 0 && dx == 0) || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int q = ny * w + nx;
          if (!visited[q] && label.values[q] == cls) {
            visited[q] = 1;
            stack.push_back(q);
          }
        }
    }
    if (static_cast<int>(component.size()) < min_px) {
      for (int p : component) out.values[p] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt sidecars

inline nlohmann::json prompt_to_json(const PromptRecord& r) {
  nlohmann::json j;
  j["scene"] = std::string(scene_name(r.scene));
  j["nuisances"] = nlohmann::json::array();
  for (const auto& n : r.nuisances) {
    j["nuisances"].push_back({{"name", std::string(nuisance_id(n.name))}, {"confidence", n.confidence}});
  }
  return j;
}

inline PromptRecord prompt_from_json(const nlohmann::json& j) {
  PromptRecord r;
  r.scene = parse_scene(j.at("scene").get<std::string>());
  if (j.contains("nuisances")) {
    for (const auto& n : j.at("nuisances")) {
      r.nuisances.push_back({parse_nuisance(n.at("name").get<std::string>()), n.at("confidence").get<double>()});
    }
  }
  auto v = validate_prompt_record(r);
  if (!v.empty()) throw std::invalid_argument("invalid prompt record: " + v.front());
  return r;
}

inline std::map<std::string, PromptRecord> load_prompt_sidecar(const std::filesystem::path& file) {
  std::map<std::string, PromptRecord> out;
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open prompt sidecar " + file.string());
  nlohmann::json j;
  in >> j;
  for (auto& [id, rec] : j.items()) out.emplace(id, prompt_from_json(rec));
  return out;
}

inline void save_prompt_sidecar(const std::filesystem::path& file, const std::map<std::string, PromptRecord>& prompts) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, rec] : prompts) j[id] = prompt_to_json(rec);
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write prompt sidecar " + file.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Manifest

struct DatasetManifest {
  std::filesystem::path root;
  Split split = Split::Train;
  std::vector<std::string> entries;
  ClassTaxonomy taxonomy;
  std::map<std::string, PromptRecord> prompts;
  std::vector<std::string> rejects;   // ids missing a counterpart, with reason
  std::vector<std::string> warnings;

  std::filesystem::path split_dir() const { return root / split_name(split); }
  std::size_t size() const { return entries.size(); }
};

inline TaskMode read_dataset_mode(const std::filesystem::path& root, TaskMode fallback = TaskMode::SCD) {
  const auto meta = root / "meta.json";
  if (!std::filesystem::exists(meta)) return fallback;
  std::ifstream in(meta);
  nlohmann::json j;
  in >> j;
  return parse_task_mode(j.value("mode", to_string(fallback)));
}

inline void write_dataset_mode(const std::filesystem::path& root, TaskMode mode) {
  std::ofstream out(root / "meta.json");
  if (!out) throw std::runtime_error("cannot write " + (root / "meta.json").string());
  out << nlohmann::json{{"mode", to_string(mode)}}.dump(2) << "\n";
}

/// Lists ids present under A, B and label; incomplete triples go to `rejects`.
inline DatasetManifest load_manifest(const std::filesystem::path& root, Split split) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.taxonomy = default_taxonomy(fs::exists(root) ? read_dataset_mode(root) : TaskMode::SCD);
  const fs::path dir = m.split_dir();
  const char* subdirs[3] = {"A", "B", "label"};
  std::map<std::string, int> seen;
  for (int s = 0; s < 3; ++s) {
    const fs::path sub = dir / subdirs[s];
    if (!fs::is_directory(sub)) continue;
    for (const auto& e : fs::directory_iterator(sub)) {
      if (!e.is_regular_file() || e.path().extension() != ".png") continue;
      seen[e.path().stem().string()] |= 1 << s;
    }
  }
  for (const auto& [id, bits] : seen) {
    if (bits == 7) {
      m.entries.push_back(id);
      continue;
    }
    std::string missing;
    for (int s = 0; s < 3; ++s) {
      if (!(bits & (1 << s))) missing += std::string(missing.empty() ? "" : ",") + subdirs[s];
    }
    m.rejects.push_back(id + ": missing " + missing);
  }
  if (m.entries.empty()) m.warnings.push_back("no complete samples under " + dir.string());
  const fs::path sidecar = dir / "prompts.json";
  if (fs::exists(sidecar)) m.prompts = load_prompt_sidecar(sidecar);
  return m;
}

/// Missing sidecar entries become (unknown, no nuisances).
inline BitemporalSample load_sample(const DatasetManifest& m, const std::string& id) {
  const auto dir = m.split_dir();
  BitemporalSample s;
  s.id = id;
  s.image_t1 = load_rgb_png(dir / "A" / (id + ".png"));
  s.image_t2 = load_rgb_png(dir / "B" / (id + ".png"));
  s.label = load_label_png(dir / "label" / (id + ".png"));
  auto it = m.prompts.find(id);
  s.prompt = it != m.prompts.end() ? it->second : PromptRecord{};
  return s;
}

inline std::vector<BitemporalSample> load_all(const DatasetManifest& m) {
  std::vector<BitemporalSample> out;
  out.reserve(m.entries.size());
  for (const auto& id : m.entries) out.push_back(load_sample(m, id));
  return out;
}

inline void save_sample(const std::filesystem::path& split_dir, const BitemporalSample& s) {
  namespace fs = std::filesystem;
  for (const char* sub : {"A", "B", "label"}) fs::create_directories(split_dir / sub);
  save_rgb_png(split_dir / "A" / (s.id + ".png"), s.image_t1);
  save_rgb_png(split_dir / "B" / (s.id + ".png"), s.image_t2);
  save_label_png(split_dir / "label" / (s.id + ".png"), s.label);
}

/// True when no id occurs in more than one manifest.
inline bool splits_disjoint(const std::vector<const DatasetManifest*>& manifests) {
  std::set<std::string> all;
  std::size_t total = 0;
  for (const auto* m : manifests) {
    all.insert(m->entries.begin(), m->entries.end());
    total += m->entries.size();
  }
  return all.size() == total;
}

/// Deterministic permutation of [0, n) for a (seed, epoch) pair.
inline std::vector<int> epoch_order(int n, std::uint64_t seed, int epoch, bool shuffle = true) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (!shuffle) return idx;
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
  for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
  return idx;
}

}  // namespace fcd
