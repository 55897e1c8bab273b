#pragma once

// Weight-shared hierarchical encoder for bitemporal pairs.
//
// Each stage downsamples (4x4/4 stem, then 2x2/2) and applies `depth`
// blocks. A block is a token mixer followed by a pointwise feed-forward,
// both residual. The reference mixer is a bidirectional linear scan over the
// row-major pixel sequence plus a depthwise 3x3 conv, which gives every
// output a receptive field covering the whole map at cost linear in h*w.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/data_model.hpp"
#include "fcd/nn.hpp"
#include "fcd/scan.hpp"

namespace fcd {

enum class BlockKind { ReferenceSsm, ConvOnly };

inline constexpr std::array<int, 4> kStageStrides = {4, 8, 16, 32};

struct EncoderConfig {
  std::array<int, 4> stage_channels = {32, 64, 128, 256};
  BlockKind block = BlockKind::ReferenceSsm;
  int depth = 2;
  int state_dim = 4;
  int mlp_ratio = 2;

  void validate() const {
    for (int i = 0; i < 4; ++i) {
      if (stage_channels[i] <= 0) throw std::invalid_argument("encoder: stage channels must be positive");
      if (i > 0 && stage_channels[i] <= stage_channels[i - 1]) {
        throw std::invalid_argument("encoder: stage channels must be strictly increasing");
      }
    }
    if (depth < 0) throw std::invalid_argument("encoder: depth must be >= 0");
    if (state_dim < 1) throw std::invalid_argument("encoder: state_dim must be >= 1");
    if (mlp_ratio < 1) throw std::invalid_argument("encoder: mlp_ratio must be >= 1");
  }
};

template <class T>
struct FeaturePyramidPair {
  std::array<FeatureMap<T>, 4> t1;
  std::array<FeatureMap<T>, 4> t2;
};

/// Bidirectional scan + depthwise 3x3 conv, no residual. Linear and bias-free.
template <class T>
struct SsmMixer {
  Var<T> fwd_decay, fwd_in, fwd_out;
  Var<T> bwd_decay, bwd_in, bwd_out;
  Conv2d<T> depthwise;

  SsmMixer() = default;
  SsmMixer(ParamStore<T>& ps, const std::string& name, int channels, int state_dim) {
    if (state_dim < 1) throw std::invalid_argument(name + ": state_dim must be >= 1");
    const Shape s{channels, state_dim, 1, 1};
    auto decay_logits = [&](const std::string& n) {
      // per-state time constants spread over decay in [0.5, 0.97]
      Tensor<T> t(s);
      for (int c = 0; c < channels; ++c)
        for (int k = 0; k < state_dim; ++k) {
          double d = state_dim == 1 ? 0.8 : 0.5 + 0.47 * k / (state_dim - 1);
          t[static_cast<std::size_t>(c) * state_dim + k] = static_cast<T>(std::log(d / (1.0 - d)));
        }
      return ps.add(n, std::move(t));
    };
    const double out_bound = 1.0 / std::sqrt(static_cast<double>(state_dim));
    fwd_decay = decay_logits(name + ".fwd.decay");
    fwd_in = ps.uniform(name + ".fwd.in", s, -0.5, 0.5);
    fwd_out = ps.uniform(name + ".fwd.out", s, -out_bound, out_bound);
    bwd_decay = decay_logits(name + ".bwd.decay");
    bwd_in = ps.uniform(name + ".bwd.in", s, -0.5, 0.5);
    bwd_out = ps.uniform(name + ".bwd.out", s, -out_bound, out_bound);
    depthwise = Conv2d<T>(ps, name + ".dw", channels, channels, 3, same3(1, channels), false);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> f = linear_scan(x, fwd_decay, fwd_in, fwd_out, false);
    Var<T> b = linear_scan(x, bwd_decay, bwd_in, bwd_out, true);
    return depthwise(add(f, b));
  }
};

/// x + mixer(x): shape-preserving, zero in -> zero out.
template <class T>
struct ReferenceSsmBlock {
  SsmMixer<T> mixer;

  ReferenceSsmBlock() = default;
  ReferenceSsmBlock(ParamStore<T>& ps, const std::string& name, int channels, int state_dim)
      : mixer(ps, name, channels, state_dim) {}

  FeatureMap<T> operator()(const FeatureMap<T>& x) const { return {add(x.data, mixer(x.data)), x.scale}; }
  Var<T> operator()(const Var<T>& x) const { return add(x, mixer(x)); }
};

template <class T>
struct EncoderBlock {
  BlockKind kind = BlockKind::ReferenceSsm;
  SsmMixer<T> ssm;
  Conv2d<T> conv_mixer;
  Conv2d<T> ffn_in, ffn_out;

  EncoderBlock() = default;
  EncoderBlock(ParamStore<T>& ps, const std::string& name, int channels, const EncoderConfig& cfg) : kind(cfg.block) {
    if (kind == BlockKind::ReferenceSsm) {
      ssm = SsmMixer<T>(ps, name + ".ssm", channels, cfg.state_dim);
    } else {
      conv_mixer = Conv2d<T>(ps, name + ".conv", channels, channels, 3, same3(), false);
    }
    ffn_in = Conv2d<T>(ps, name + ".ffn_in", channels, channels * cfg.mlp_ratio, 1);
    ffn_out = Conv2d<T>(ps, name + ".ffn_out", channels * cfg.mlp_ratio, channels, 1);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> mixed = kind == BlockKind::ReferenceSsm ? ssm(x) : conv_mixer(x);
    Var<T> h = add(x, mixed);
    return add(h, ffn_out(silu(ffn_in(h))));
  }
};

template <class T>
class SiameseEncoder {
 public:
  SiameseEncoder() = default;
  SiameseEncoder(ParamStore<T>& ps, const EncoderConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    int in_ch = 3;
    for (int i = 0; i < 4; ++i) {
      const std::string name = "encoder.stage" + std::to_string(i);
      const int k = i == 0 ? 4 : 2;
      down_[i] = Conv2d<T>(ps, name + ".down", in_ch, cfg.stage_channels[i], k, ConvGeometry{k, 0, 1, 1});
      for (int b = 0; b < cfg.depth; ++b) {
        blocks_[i].emplace_back(ps, name + ".block" + std::to_string(b), cfg.stage_channels[i], cfg);
      }
      in_ch = cfg.stage_channels[i];
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  /// One temporal stream: (N, 3, H, W) with H, W divisible by 32.
  std::array<FeatureMap<T>, 4> forward(const Var<T>& image) const {
    const Shape s = image.shape();
    if (s.c != 3) throw std::invalid_argument("encoder: expected 3 input channels, got " + std::to_string(s.c));
    if (s.h % 32 != 0 || s.w % 32 != 0) {
      throw std::invalid_argument("encoder: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                  " is not divisible by 32");
    }
    std::array<FeatureMap<T>, 4> out;
    Var<T> x = image;
    for (int i = 0; i < 4; ++i) {
      x = down_[i](x);
      for (const auto& blk : blocks_[i]) x = blk(x);
      out[i] = {x, kStageStrides[i]};
    }
    return out;
  }

  /// Both streams through identical weights.
  FeaturePyramidPair<T> encode(const Var<T>& t1, const Var<T>& t2) const {
    if (!(t1.shape() == t2.shape())) {
      throw std::invalid_argument("encoder: temporal inputs differ in shape " + t1.shape().str() + " vs " +
                                  t2.shape().str());
    }
    return {forward(t1), forward(t2)};
  }

 private:
  EncoderConfig cfg_;
  std::array<Conv2d<T>, 4> down_;
  std::array<std::vector<EncoderBlock<T>>, 4> blocks_;
};

}  // namespace fcd
