#pragma once

// Frozen text encoders. Neither implementation owns trainable parameters.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <cstdlib>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fcd {

enum class TextEncoderKind { PretrainedFrozen, DeterministicStub };

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual TextEncoderKind kind() const = 0;
  /// Raw (unnormalized) embedding of one string.
  virtual std::vector<double> encode(const std::string& text) const = 0;
};

/// Seeded hash of the string expanded into a d-vector, L2-normalized.
/// Needs no weights; identical strings always give identical bits.
class StubTextEncoder final : public TextEncoder {
 public:
  explicit StubTextEncoder(int dim = 512, std::uint64_t seed = 0x5eed) : dim_(dim), seed_(seed) {
    if (dim < 8) throw std::invalid_argument("text encoder dim must be >= 8");
  }

  std::string name() const override { return "stub-" + std::to_string(dim_); }
  int dim() const override { return dim_; }
  TextEncoderKind kind() const override { return TextEncoderKind::DeterministicStub; }

  std::vector<double> encode(const std::string& text) const override {
    std::uint64_t h = 1469598103934665603ULL ^ seed_;  // FNV-1a
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    std::vector<double> v(dim_);
    std::uint64_t state = h;
    double norm2 = 0;
    for (int i = 0; i < dim_; ++i) {
      // splitmix64
      state += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      z ^= z >> 31;
      v[i] = static_cast<double>(z >> 11) * (2.0 / 9007199254740992.0) - 1.0;
      norm2 += v[i] * v[i];
    }
    const double n = std::sqrt(norm2);
    for (auto& x : v) x /= n;
    return v;
  }

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Precomputed outputs of a frozen pretrained encoder, loaded from a JSON file:
///   {"name": "...", "dim": 512, "embeddings": {"<prompt>": [..], ...}}
/// Every prompt the pipeline can emit must be present; unknown strings throw.
class EmbeddingTableEncoder final : public TextEncoder {
 public:
  explicit EmbeddingTableEncoder(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open text-encoder weights: " + path.string());
    nlohmann::json j;
    in >> j;
    name_ = j.value("name", path.filename().string());
    dim_ = j.at("dim").get<int>();
    if (dim_ < 8) throw std::invalid_argument("text encoder dim must be >= 8");
    for (auto& [key, val] : j.at("embeddings").items()) {
      auto vec = val.get<std::vector<double>>();
      if (static_cast<int>(vec.size()) != dim_) {
        throw std::invalid_argument("embedding for \"" + key + "\" has wrong dimension");
      }
      table_.emplace(key, std::move(vec));
    }
  }

  std::string name() const override { return name_; }
  int dim() const override { return dim_; }
  TextEncoderKind kind() const override { return TextEncoderKind::PretrainedFrozen; }

  std::vector<double> encode(const std::string& text) const override {
    auto it = table_.find(text);
    if (it == table_.end()) throw std::out_of_range("no embedding for prompt");
    return it->second;
  }

 private:
  std::string name_;
  int dim_ = 0;
  std::map<std::string, std::vector<double>> table_;
};

/// Environment variable naming a local embedding-table file.
inline constexpr const char* kTextEncoderEnv = "FCD_TEXT_ENCODER_WEIGHTS";

/// "stub" (or empty) -> stub encoder of `dim`; "pretrained" -> table named by the
/// environment variable; anything else is a table path.
inline std::shared_ptr<const TextEncoder> make_text_encoder(const std::string& kind, int dim = 512) {
  if (kind.empty() || kind == "stub") return std::make_shared<StubTextEncoder>(dim);
  if (kind == "pretrained") {
    const char* path = std::getenv(kTextEncoderEnv);
    if (!path || !*path) {
      throw std::runtime_error(std::string("text_encoder = pretrained needs ") + kTextEncoderEnv + " to be set");
    }
    return std::make_shared<EmbeddingTableEncoder>(path);
  }
  return std::make_shared<EmbeddingTableEncoder>(kind);
}

}  // namespace fcd
