#pragma once

// Binary checkpoint:
//   "FCDCKPT1" | u32 version | u64 meta_len | meta JSON | per parameter: u64 count, count x f64
// Metadata holds the config snapshot, taxonomy, epoch, best-metric record and
// the ordered parameter table. Multi-byte values are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcd/config.hpp"
#include "fcd/model.hpp"

namespace fcd {

inline constexpr char kCheckpointMagic[8] = {'F', 'C', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct BestRecord {
  std::string metric = "f1";
  double value = 0.0;
  int epoch = -1;
  friend bool operator==(const BestRecord&, const BestRecord&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

struct Checkpoint {
  TrainConfig config;
  ClassTaxonomy taxonomy;
  int epoch = 0;
  BestRecord best;
  std::vector<NamedTensor> weights;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.value.size();
    return n;
  }
};

inline nlohmann::json taxonomy_to_json(const ClassTaxonomy& t) {
  nlohmann::json j;
  j["mode"] = to_string(t.mode);
  j["classes"] = nlohmann::json::array();
  for (const auto& c : t.classes) {
    j["classes"].push_back({{"id", c.id}, {"name", c.name}, {"brief_prompt", c.brief_prompt},
                            {"color", {c.color.r, c.color.g, c.color.b}}});
  }
  return j;
}

inline ClassTaxonomy taxonomy_from_json(const nlohmann::json& j) {
  ClassTaxonomy t;
  t.mode = parse_task_mode(j.at("mode").get<std::string>());
  for (const auto& c : j.at("classes")) {
    const auto& col = c.at("color");
    t.classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(), c.at("brief_prompt").get<std::string>(),
                         {col.at(0).get<std::uint8_t>(), col.at(1).get<std::uint8_t>(), col.at(2).get<std::uint8_t>()}});
  }
  return t;
}

template <class T>
Checkpoint make_checkpoint(const ChangeDetector<T>& model, const TrainConfig& cfg, int epoch, BestRecord best = {}) {
  Checkpoint c;
  c.config = cfg;
  c.config.model = model.config();
  c.taxonomy = model.taxonomy();
  c.epoch = epoch;
  c.best = best;
  for (const auto& p : model.params().params()) c.weights.push_back({p.name, p.var.value().template cast<double>()});
  return c;
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json meta;
  meta["version"] = kCheckpointVersion;
  nlohmann::json cfg = nlohmann::json::array();
  for (const auto& [k, v] : config_items(c.config)) cfg.push_back({k, v});
  meta["config"] = cfg;
  meta["taxonomy"] = taxonomy_to_json(c.taxonomy);
  meta["epoch"] = c.epoch;
  meta["best"] = {{"metric", c.best.metric}, {"value", c.best.value}, {"epoch", c.best.epoch}};
  meta["params"] = nlohmann::json::array();
  for (const auto& w : c.weights) {
    const Shape s = w.value.shape();
    meta["params"].push_back({{"name", w.name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  const std::string m = meta.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  auto put = [&out](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t mlen = m.size();
  put(&version, sizeof version);
  put(&mlen, sizeof mlen);
  out += m;
  for (const auto& w : c.weights) {
    const std::uint64_t n = w.value.size();
    put(&n, sizeof n);
    put(w.value.data(), n * sizeof(double));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = 0;
  take(&version, sizeof version);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  std::uint64_t mlen = 0;
  take(&mlen, sizeof mlen);
  if (pos + mlen > bytes.size()) throw std::runtime_error("checkpoint: truncated metadata");
  const nlohmann::json meta = nlohmann::json::parse(bytes.substr(pos, mlen));
  pos += mlen;

  Checkpoint c;
  TrainConfig cfg;
  for (const auto& kv : meta.at("config")) set_config_value(cfg, kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
  c.config = cfg;
  c.taxonomy = taxonomy_from_json(meta.at("taxonomy"));
  c.epoch = meta.at("epoch").get<int>();
  const auto& b = meta.at("best");
  c.best = {b.at("metric").get<std::string>(), b.at("value").get<double>(), b.at("epoch").get<int>()};
  for (const auto& p : meta.at("params")) {
    const auto& sh = p.at("shape");
    const Shape s{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>(), sh.at(3).get<int>()};
    std::uint64_t n = 0;
    take(&n, sizeof n);
    if (n != s.numel()) throw std::runtime_error("checkpoint: size mismatch for " + p.at("name").get<std::string>());
    std::vector<double> data(n);
    take(data.data(), n * sizeof(double));
    c.weights.push_back({p.at("name").get<std::string>(), Tensor<double>(s, std::move(data))});
  }
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

/// Copies checkpoint weights into a model with an identical parameter table.
template <class T>
void load_weights(ChangeDetector<T>& model, const Checkpoint& c) {
  auto& params = model.params().params();
  if (params.size() != c.weights.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch (" + std::to_string(c.weights.size()) + " vs " +
                             std::to_string(params.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != c.weights[i].name) {
      throw std::runtime_error("checkpoint: parameter " + std::to_string(i) + " is " + c.weights[i].name +
                               ", model expects " + params[i].name);
    }
    require_same_shape(params[i].var.shape(), c.weights[i].value.shape(), "checkpoint weight");
    params[i].var.mutable_value() = c.weights[i].value.template cast<T>();
  }
}

template <class T>
std::unique_ptr<ChangeDetector<T>> model_from_checkpoint(const Checkpoint& c) {
  auto text = make_text_encoder(c.config.text_encoder, c.config.model.cmla.text_dim);
  auto model = std::make_unique<ChangeDetector<T>>(c.config.model, c.taxonomy, text, c.config.seed);
  load_weights(*model, c);
  return model;
}

}  // namespace fcd
