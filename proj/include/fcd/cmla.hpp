#pragma once

// Cross-modal arbitration between decoder features and text prototypes.
//
//   t_cat  = Norm(E(brief prompts))                    (N, d), frozen, cached
//   delta  = MLP(mean_b Norm(E(input prompt_b)))       (d)
//   t_adp  = Norm(t_cat + alpha * delta)
//   V      = Norm(Conv1x1(Z))                           per pixel over d
//   S      = gamma * <V, t_adp>                         (N, h, w)
//   G      = sigmoid(Conv1x1(S))                        (1, h, w)
//   Z_g    = Z + Z * G

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/data_model.hpp"
#include "fcd/nn.hpp"
#include "fcd/text_encoder.hpp"

namespace fcd {

inline std::vector<std::string> build_brief_prompts(const ClassTaxonomy& t) {
  std::vector<std::string> out;
  out.reserve(t.classes.size());
  for (const auto& c : t.classes) out.push_back(c.brief_prompt);
  return out;
}

inline constexpr double kNuisanceThreshold = 0.5;

/// "Satellite image of {scene} area. Ignore {a}, {b}." or "... Clear conditions."
inline std::string build_input_prompt(const PromptRecord& r) {
  std::string s = "Satellite image of " + std::string(scene_name(r.scene)) + " area.";
  std::vector<std::string> kept;
  for (const auto& n : r.nuisances) {
    if (n.confidence > kNuisanceThreshold) kept.emplace_back(nuisance_phrase(n.name));
  }
  if (kept.empty()) return s + " Clear conditions.";
  s += " Ignore ";
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) s += ", ";
    s += kept[i];
  }
  return s + ".";
}

/// Input prompts must not mention any category (no label leakage).
inline std::vector<std::string> check_prompt_leakage(const std::string& input_prompt, const ClassTaxonomy& t) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  };
  const std::string p = lower(input_prompt);
  std::vector<std::string> hits;
  for (const auto& c : t.classes) {
    for (const std::string& term : {lower(c.brief_prompt), lower(c.name)}) {
      if (!term.empty() && p.find(term) != std::string::npos) hits.push_back(term);
    }
  }
  return hits;
}

/// Unit-norm prompt embeddings, one row per prompt: (P, d, 1, 1).
inline Tensor<double> encode_normalized(const TextEncoder& enc, const std::vector<std::string>& prompts) {
  if (prompts.empty()) throw std::invalid_argument("encode: empty prompt list");
  Tensor<double> out(Shape{static_cast<int>(prompts.size()), enc.dim(), 1, 1});
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<double> v;
    try {
      v = enc.encode(prompts[i]);
    } catch (const std::exception& e) {
      throw std::runtime_error("text encoder '" + enc.name() + "' failed on prompt \"" + prompts[i] + "\": " + e.what());
    }
    if (static_cast<int>(v.size()) != enc.dim()) {
      throw std::runtime_error("text encoder '" + enc.name() + "' returned wrong dimension for \"" + prompts[i] + "\"");
    }
    double n2 = 0;
    for (double x : v) n2 += x * x;
    const double n = std::max(std::sqrt(n2), 1e-12);
    for (int k = 0; k < enc.dim(); ++k) out[i * enc.dim() + k] = v[k] / n;
  }
  return out;
}

template <class T>
struct TextPrototypes {
  Tensor<T> matrix;  // (N, d, 1, 1), unit rows
  bool adapted = false;

  int count() const { return matrix.shape().n; }
  int dim() const { return matrix.shape().c; }
};

/// Process-wide memo of brief-prompt prototypes keyed by encoder and prompt list.
class PrototypeCache {
 public:
  static PrototypeCache& instance() {
    static PrototypeCache cache;
    return cache;
  }

  std::shared_ptr<const Tensor<double>> get(const TextEncoder& enc, const std::vector<std::string>& prompts) {
    std::string key = enc.name();
    for (const auto& p : prompts) key += '\x1f' + p;
    {
      std::shared_lock lock(mutex_);
      auto it = entries_.find(key);
      if (it != entries_.end()) return it->second;
    }
    auto value = std::make_shared<const Tensor<double>>(encode_normalized(enc, prompts));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, value);
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const Tensor<double>>> entries_;
};

template <class T>
TextPrototypes<T> category_prototypes(const std::vector<std::string>& prompts, const TextEncoder& enc) {
  auto cached = PrototypeCache::instance().get(enc, prompts);
  return {cached->template cast<T>(), false};
}

struct CmlaConfig {
  int text_dim = 512;
  double alpha_init = 0.1;
  double gamma_init = 10.0;
  bool channel_gate = false;  // N -> C gate instead of N -> 1
};

template <class T>
struct CmlaOutput {
  Var<T> scores;      // S (B, N, h, w)
  Var<T> gate;        // G (B, 1 or C, h, w)
  Var<T> gated;       // Z_g
  Var<T> prototypes;  // adapted (N, d, 1, 1)
};

template <class T>
class Cmla {
 public:
  Conv2d<T> proj;
  Var<T> alpha;
  Var<T> gamma;
  Conv2d<T> mlp1, mlp2;
  Conv2d<T> gate_proj;

  Cmla() = default;
  Cmla(ParamStore<T>& ps, int z_channels, int num_classes, const CmlaConfig& cfg) : cfg_(cfg) {
    if (cfg.text_dim < 8) throw std::invalid_argument("cmla: text_dim must be >= 8");
    const int d = cfg.text_dim;
    const int hidden = std::max(1, d / 4);
    proj = Conv2d<T>(ps, "cmla.proj", z_channels, d, 1);
    alpha = ps.filled("cmla.alpha", Shape{1, 1, 1, 1}, static_cast<T>(cfg.alpha_init));
    gamma = ps.filled("cmla.gamma", Shape{1, 1, 1, 1}, static_cast<T>(cfg.gamma_init));
    mlp1 = Conv2d<T>(ps, "cmla.mlp1", d, hidden, 1);
    mlp2 = Conv2d<T>(ps, "cmla.mlp2", hidden, d, 1);
    const int gate_out = cfg.channel_gate ? z_channels : 1;
    gate_proj.geo = {};
    gate_proj.weight = ps.zeros("cmla.gate.weight", Shape{gate_out, num_classes, 1, 1});
    gate_proj.bias = ps.zeros("cmla.gate.bias", Shape{gate_out, 1, 1, 1});
  }

  const CmlaConfig& config() const { return cfg_; }

  /// delta = MLP(mean of unit prompt embeddings) -> (1, d, 1, 1).
  Var<T> context_offset(const Tensor<T>& prompt_embeddings) const {
    if (prompt_embeddings.empty() || prompt_embeddings.shape().n < 1) {
      throw std::invalid_argument("context_offset: empty prompt batch");
    }
    Var<T> mean = batch_mean(constant(prompt_embeddings));
    return mlp2(silu(mlp1(mean)));
  }

  Var<T> adapt_prototypes(const TextPrototypes<T>& t, const Var<T>& delta) const {
    return renormalized_residual(constant(t.matrix), mul(alpha, delta));
  }

  /// V = Norm(proj(Z)).
  Var<T> embed(const Var<T>& z) const { return l2_normalize_channels(proj(z)); }

  Var<T> score_map(const Var<T>& z, const Var<T>& adapted) const {
    return mul(gamma, conv2d(embed(z), adapted));
  }

  Var<T> gate(const Var<T>& scores) const { return sigmoid(gate_proj(scores)); }

  Var<T> apply_gate(const Var<T>& z, const Var<T>& g) const { return add(z, mul(z, g)); }

  CmlaOutput<T> forward(const Var<T>& z, const TextPrototypes<T>& brief, const Tensor<T>& prompt_embeddings) const {
    CmlaOutput<T> out;
    out.prototypes = adapt_prototypes(brief, context_offset(prompt_embeddings));
    out.scores = score_map(z, out.prototypes);
    out.gate = gate(out.scores);
    out.gated = apply_gate(z, out.gate);
    return out;
  }

 private:
  CmlaConfig cfg_;
};

}  // namespace fcd
