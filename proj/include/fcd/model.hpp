#pragma once

// Full change detector: siamese encoder -> decoder features Z -> CMLA gate -> head.

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/cmla.hpp"
#include "fcd/config.hpp"
#include "fcd/data_model.hpp"
#include "fcd/decoder.hpp"
#include "fcd/encoder.hpp"
#include "fcd/objective.hpp"
#include "fcd/text_encoder.hpp"

namespace fcd {

/// (N, 3, H, W) tensor from a batch of images, mapped from [0,1] to [-1,1].
template <class T>
Tensor<T> images_to_tensor(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor<T> t(Shape{static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage& im = *images[n];
    if (im.height != h || im.width != w) throw std::invalid_argument("images_to_tensor: mixed image sizes in batch");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = static_cast<T>(2.0 * im.at(y, x, c) - 1.0);
  }
  return t;
}

inline LabelTensor labels_to_tensor(const std::vector<const LabelMap*>& labels) {
  if (labels.empty()) throw std::invalid_argument("labels_to_tensor: empty batch");
  const int h = labels[0]->height, w = labels[0]->width;
  LabelTensor t(Shape{static_cast<int>(labels.size()), 1, h, w});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n]->height != h || labels[n]->width != w) throw std::invalid_argument("labels_to_tensor: mixed sizes");
    std::copy(labels[n]->values.begin(), labels[n]->values.end(), t.data() + n * static_cast<std::size_t>(h) * w);
  }
  return t;
}

/// Per-pixel argmax over classes of sample `n`.
template <class T>
LabelMap argmax_map(const Tensor<T>& logits, int n) {
  const Shape s = logits.shape();
  LabelMap out(s.h, s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      int best = 0;
      T bv = logits.at(n, 0, y, x);
      for (int k = 1; k < s.c; ++k) {
        const T v = logits.at(n, k, y, x);
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return out;
}

template <class T>
struct ModelOutput {
  Var<T> logits;          // final (gated) logits, (N, K, H, W)
  Var<T> scores;          // S at Z resolution, undefined without CMLA
  Var<T> gate;            // G, undefined without CMLA
  FeatureMap<T> z;        // ungated decoder features
};

template <class T>
class ChangeDetector {
 public:
  ChangeDetector(const ModelConfig& cfg, const ClassTaxonomy& taxonomy, std::shared_ptr<const TextEncoder> text,
                 std::uint64_t seed)
      : cfg_(cfg), taxonomy_(taxonomy), text_(std::move(text)), ps_(seed) {
    cfg.validate();
    auto problems = validate_taxonomy(taxonomy);
    if (!problems.empty()) throw std::invalid_argument("taxonomy: " + problems.front());
    encoder_ = SiameseEncoder<T>(ps_, cfg.encoder);
    decoder_ = FgdaDecoder<T>(ps_, cfg.fgda_configs(), taxonomy.size(), cfg.encoder.state_dim);
    if (cfg.use_cmla) {
      if (!text_) throw std::invalid_argument("model: CMLA enabled without a text encoder");
      if (text_->dim() != cfg.cmla.text_dim) {
        throw std::invalid_argument("model: text encoder dim " + std::to_string(text_->dim()) +
                                    " != cmla.text_dim " + std::to_string(cfg.cmla.text_dim));
      }
      cmla_ = Cmla<T>(ps_, cfg.decoder_channels[0], taxonomy.size(), cfg.cmla);
      brief_ = category_prototypes<T>(build_brief_prompts(taxonomy), *text_);
    }
  }

  ChangeDetector(const ChangeDetector&) = delete;
  ChangeDetector& operator=(const ChangeDetector&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const ClassTaxonomy& taxonomy() const { return taxonomy_; }
  int num_classes() const { return taxonomy_.size(); }
  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const SiameseEncoder<T>& encoder() const { return encoder_; }
  const FgdaDecoder<T>& decoder() const { return decoder_; }
  const Cmla<T>& cmla() const { return cmla_; }
  const TextPrototypes<T>& brief_prototypes() const { return brief_; }
  const TextEncoder* text_encoder() const { return text_.get(); }

  /// Trainable scalars; the frozen text encoder owns none.
  std::size_t count_parameters() const { return ps_.count(); }

  /// Unit-norm input-prompt embeddings for a batch, (B, d, 1, 1).
  Tensor<T> prompt_embeddings(const std::vector<std::string>& prompts) const {
    if (!text_) throw std::logic_error("model has no text encoder");
    return encode_normalized(*text_, prompts).template cast<T>();
  }

  static std::vector<std::string> input_prompts(const std::vector<const BitemporalSample*>& batch) {
    std::vector<std::string> out;
    for (const auto* s : batch) out.push_back(build_input_prompt(s->prompt.value_or(PromptRecord{})));
    return out;
  }

  /// Full forward. `prompts` may be empty when CMLA is disabled.
  ModelOutput<T> forward(const Var<T>& t1, const Var<T>& t2, const std::vector<std::string>& prompts) const {
    const Shape s = t1.shape();
    ModelOutput<T> out;
    out.z = decoder_.decode_features(encoder_.encode(t1, t2));
    Var<T> z = out.z.data;
    if (cfg_.use_cmla) {
      if (prompts.size() != static_cast<std::size_t>(s.n)) {
        throw std::invalid_argument("model: need one input prompt per sample");
      }
      auto c = cmla_.forward(z, brief_, prompt_embeddings(prompts));
      out.scores = c.scores;
      out.gate = c.gate;
      z = c.gated;
    }
    out.logits = decoder_.classify(z, s.h, s.w);
    return out;
  }

  /// Head applied to Z directly, bypassing the gate.
  Var<T> forward_ungated(const Var<T>& t1, const Var<T>& t2) const {
    const Shape s = t1.shape();
    auto z = decoder_.decode_features(encoder_.encode(t1, t2));
    return decoder_.classify(z.data, s.h, s.w);
  }

  ModelOutput<T> forward(const std::vector<const BitemporalSample*>& batch) const {
    std::vector<const RgbImage*> a, b;
    for (const auto* s : batch) {
      a.push_back(&s->image_t1);
      b.push_back(&s->image_t2);
    }
    return forward(constant(images_to_tensor<T>(a)), constant(images_to_tensor<T>(b)),
                   cfg_.use_cmla ? input_prompts(batch) : std::vector<std::string>{});
  }

  std::vector<LabelMap> predict(const std::vector<const BitemporalSample*>& batch) const {
    auto out = forward(batch);
    std::vector<LabelMap> maps;
    for (int n = 0; n < static_cast<int>(batch.size()); ++n) maps.push_back(argmax_map(out.logits.value(), n));
    return maps;
  }

 private:
  ModelConfig cfg_;
  ClassTaxonomy taxonomy_;
  std::shared_ptr<const TextEncoder> text_;
  ParamStore<T> ps_;
  SiameseEncoder<T> encoder_;
  FgdaDecoder<T> decoder_;
  Cmla<T> cmla_;
  TextPrototypes<T> brief_;
};

template <class T>
struct LossBreakdown {
  Var<T> total;
  double main = 0, aux = 0;
  std::size_t hard_pixels = 0;
  bool all_ignored = false;
};

/// Main loss on the final logits plus lambda * aux on S upsampled to label resolution, restricted to hard pixels.
template <class T>
LossBreakdown<T> compute_loss(const ModelOutput<T>& out, const LabelTensor& labels, const LossConfig& cfg) {
  LossBreakdown<T> r;
  auto main = main_loss(out.logits, labels, cfg);
  r.main = static_cast<double>(main.value.value()[0]);
  r.all_ignored = main.all_ignored;
  r.total = main.value;
  if (out.scores.defined()) {
    const LabelTensor mask = hard_mask(out.logits.value(), labels, cfg);
    r.hard_pixels = mask_count(mask);
    const Shape ls = labels.shape();
    Var<T> aux = aux_loss(resize_bilinear(out.scores, ls.h, ls.w), labels, mask, cfg);
    r.aux = static_cast<double>(aux.value()[0]);
    r.total = total_loss(main.value, aux, cfg);
  }
  return r;
}

}  // namespace fcd
