#pragma once

// Fine-grained difference-aware decoder. Per scale:
//   PDA   : P = [ |Ia - Ib| , max(Ia, Ib) ]
//   MSDE  : M = SiLU( Conv1x1[ GConv3x3(P) , DGConv3x3_d2(P) ] )
//   DPSE  : R = Conv1x1( M * SE(M) * CBAM(M) )
//   DRSA  : D = SE-recalibrate( SiLU( Conv3x3( Conv1x1[ R, Ia, Ib ] ) ) )
//   recon : out = x + SsmMixer(x) + Conv3x3(x),  x = D + lateral(coarser)
// Stages run coarsest first; the stride-4 output is Z.

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/encoder.hpp"

namespace fcd {

struct FGDABlockConfig {
  int in_channels = 32;   // per temporal stream
  int out_channels = 32;
  int groups = 4;
  int dilation = 2;
  int se_reduction = 4;
  bool enable_msde = true;
  bool enable_dpse = true;
  bool enable_drsa = true;

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0) throw std::invalid_argument("fgda: channel counts must be positive");
    if (groups < 1 || in_channels % groups != 0) {
      throw std::invalid_argument("fgda: in_channels " + std::to_string(in_channels) + " not divisible by groups " +
                                  std::to_string(groups));
    }
    if (se_reduction < 1) throw std::invalid_argument("fgda: se_reduction must be >= 1");
    if (dilation != 2) throw std::invalid_argument("fgda: dilation is fixed at 2");
  }
};

/// Builds the four per-stage block configs from encoder widths and decoder widths.
inline std::array<FGDABlockConfig, 4> make_fgda_configs(const std::array<int, 4>& encoder_channels,
                                                       const std::array<int, 4>& decoder_channels, bool msde = true,
                                                       bool dpse = true, bool drsa = true) {
  std::array<FGDABlockConfig, 4> cfgs;
  for (int i = 0; i < 4; ++i) {
    cfgs[i].in_channels = encoder_channels[i];
    cfgs[i].out_channels = decoder_channels[i];
    cfgs[i].enable_msde = msde;
    cfgs[i].enable_dpse = dpse;
    cfgs[i].enable_drsa = drsa;
  }
  return cfgs;
}

/// Physical difference anchor: channel concat of |a - b| and max(a, b).
template <class T>
FeatureMap<T> pda(const FeatureMap<T>& ia, const FeatureMap<T>& ib) {
  if (!(ia.data.shape() == ib.data.shape())) {
    throw std::invalid_argument("pda: shape mismatch " + ia.data.shape().str() + " vs " + ib.data.shape().str());
  }
  return {concat_channels<T>({abs(sub(ia.data, ib.data)), maximum(ia.data, ib.data)}), ia.scale};
}

/// Squeeze-excitation gate (N, C, 1, 1), values in (0, 1).
template <class T>
struct SqueezeExcite {
  Conv2d<T> fc1, fc2;

  SqueezeExcite() = default;
  SqueezeExcite(ParamStore<T>& ps, const std::string& name, int channels, int reduction)
      : fc1(ps, name + ".fc1", channels, std::max(1, channels / reduction), 1),
        fc2(ps, name + ".fc2", std::max(1, channels / reduction), channels, 1) {}

  Var<T> gate(const Var<T>& x) const { return sigmoid(fc2(silu(fc1(global_avg_pool(x))))); }
};

/// CBAM: channel attention (shared MLP over avg/max pooled) then spatial
/// attention (7x7 conv over channel-mean/max of the channel-refined map).
template <class T>
struct Cbam {
  Conv2d<T> mlp1, mlp2, spatial;

  Cbam() = default;
  Cbam(ParamStore<T>& ps, const std::string& name, int channels, int reduction)
      : mlp1(ps, name + ".mlp1", channels, std::max(1, channels / reduction), 1),
        mlp2(ps, name + ".mlp2", std::max(1, channels / reduction), channels, 1),
        spatial(ps, name + ".spatial", 2, 1, 7, ConvGeometry{1, 3, 1, 1}) {}

  Var<T> channel_gate(const Var<T>& x) const {
    auto mlp = [&](const Var<T>& v) { return mlp2(silu(mlp1(v))); };
    return sigmoid(add(mlp(global_avg_pool(x)), mlp(global_max_pool(x))));
  }

  Var<T> spatial_gate(const Var<T>& refined) const {
    return sigmoid(spatial(concat_channels<T>({channel_mean(refined), channel_max(refined)})));
  }

  /// Full attention map (N, C, H, W) = channel gate * spatial gate.
  Var<T> attention(const Var<T>& x) const {
    Var<T> mc = channel_gate(x);
    Var<T> ms = spatial_gate(mul(x, mc));
    return mul(mc, ms);
  }
};

template <class T>
struct Msde {
  Conv2d<T> local, dilated, fuse;

  Msde() = default;
  Msde(ParamStore<T>& ps, const std::string& name, const FGDABlockConfig& cfg) {
    const int c = 2 * cfg.in_channels;
    local = Conv2d<T>(ps, name + ".gconv", c, c, 3, same3(1, cfg.groups));
    dilated = Conv2d<T>(ps, name + ".dgconv", c, c, 3, same3(cfg.dilation, cfg.groups));
    fuse = Conv2d<T>(ps, name + ".fuse", 2 * c, cfg.out_channels, 1);
  }

  Var<T> operator()(const Var<T>& p) const { return silu(fuse(concat_channels<T>({local(p), dilated(p)}))); }
};

template <class T>
struct Dpse {
  SqueezeExcite<T> se;
  Cbam<T> cbam;
  Conv2d<T> proj;

  Dpse() = default;
  Dpse(ParamStore<T>& ps, const std::string& name, int channels, int reduction)
      : se(ps, name + ".se", channels, reduction),
        cbam(ps, name + ".cbam", channels, reduction),
        proj(ps, name + ".proj", channels, channels, 1) {}

  Var<T> operator()(const Var<T>& m) const { return proj(mul(mul(m, se.gate(m)), cbam.attention(m))); }
};

template <class T>
struct Drsa {
  Conv2d<T> compress, refine;
  SqueezeExcite<T> se;

  Drsa() = default;
  Drsa(ParamStore<T>& ps, const std::string& name, int r_channels, int feat_channels, int out_channels,
       int reduction)
      : compress(ps, name + ".compress", r_channels + 2 * feat_channels, out_channels, 1),
        refine(ps, name + ".refine", out_channels, out_channels, 3, same3()),
        se(ps, name + ".se", out_channels, reduction) {}

  Var<T> operator()(const Var<T>& r, const Var<T>& ia, const Var<T>& ib) const {
    const Shape rs = r.shape(), as = ia.shape(), bs = ib.shape();
    if (rs.h != as.h || rs.w != as.w || as.h != bs.h || as.w != bs.w || rs.n != as.n || as.n != bs.n) {
      throw std::invalid_argument("drsa: inputs are not spatially aligned");
    }
    Var<T> x = silu(refine(compress(concat_channels<T>({r, ia, ib}))));
    return mul(x, se.gate(x));
  }
};

/// Parallel long-range (scan) and local (3x3) branches around an identity path.
template <class T>
struct ConvMamba {
  SsmMixer<T> ssm;
  Conv2d<T> local;

  ConvMamba() = default;
  ConvMamba(ParamStore<T>& ps, const std::string& name, int channels, int state_dim)
      : ssm(ps, name + ".ssm", channels, state_dim), local(ps, name + ".local", channels, channels, 3, same3()) {}

  Var<T> operator()(const Var<T>& x) const { return add(add(x, ssm(x)), local(x)); }
};

template <class T>
class FgdaBlock {
 public:
  FgdaBlock() = default;
  FgdaBlock(ParamStore<T>& ps, const std::string& name, const FGDABlockConfig& cfg, int state_dim) : cfg_(cfg) {
    cfg.validate();
    const int p_ch = 2 * cfg.in_channels;
    if (cfg.enable_msde) {
      msde_ = Msde<T>(ps, name + ".msde", cfg);
    } else {
      msde_skip_ = Conv2d<T>(ps, name + ".msde_skip", p_ch, cfg.out_channels, 1);
    }
    if (cfg.enable_dpse) dpse_ = Dpse<T>(ps, name + ".dpse", cfg.out_channels, cfg.se_reduction);
    if (cfg.enable_drsa) {
      drsa_ = Drsa<T>(ps, name + ".drsa", cfg.out_channels, cfg.in_channels, cfg.out_channels, cfg.se_reduction);
    } else {
      drsa_skip_ = Conv2d<T>(ps, name + ".drsa_skip", cfg.out_channels, cfg.out_channels, 1);
    }
    recon_ = ConvMamba<T>(ps, name + ".recon", cfg.out_channels, state_dim);
  }

  const FGDABlockConfig& config() const { return cfg_; }

  Var<T> msde(const Var<T>& p) const { return cfg_.enable_msde ? msde_(p) : msde_skip_(p); }
  Var<T> dpse(const Var<T>& m) const { return cfg_.enable_dpse ? dpse_(m) : m; }
  Var<T> drsa(const Var<T>& r, const Var<T>& ia, const Var<T>& ib) const {
    return cfg_.enable_drsa ? drsa_(r, ia, ib) : drsa_skip_(r);
  }
  Var<T> reconstruct(const Var<T>& x) const { return recon_(x); }

  const Dpse<T>& dpse_module() const { return dpse_; }
  Dpse<T>& dpse_module() { return dpse_; }
  const Msde<T>& msde_module() const { return msde_; }

  /// `lateral` (already projected and upsampled) is added before reconstruction when defined.
  Var<T> operator()(const FeatureMap<T>& ia, const FeatureMap<T>& ib, const Var<T>& lateral, Var<T>* pda_out = nullptr) const {
    FeatureMap<T> p = pda(ia, ib);
    if (pda_out) *pda_out = p.data;
    Var<T> d = drsa(dpse(msde(p.data)), ia.data, ib.data);
    if (lateral.defined()) d = add(d, lateral);
    return reconstruct(d);
  }

 private:
  FGDABlockConfig cfg_;
  Msde<T> msde_;
  Conv2d<T> msde_skip_;
  Dpse<T> dpse_;
  Drsa<T> drsa_;
  Conv2d<T> drsa_skip_;
  ConvMamba<T> recon_;
};

template <class T>
struct DecoderOutput {
  FeatureMap<T> z;
  Var<T> logits;                 // (N, K, H, W)
  std::array<Var<T>, 4> pda;     // per-stage anchors, for inspection
};

template <class T>
class FgdaDecoder {
 public:
  FgdaDecoder() = default;
  FgdaDecoder(ParamStore<T>& ps, const std::array<FGDABlockConfig, 4>& cfgs, int num_classes, int state_dim)
      : cfgs_(cfgs) {
    if (num_classes < 2) throw std::invalid_argument("decoder: need at least 2 classes");
    for (int i = 0; i < 4; ++i) {
      blocks_[i] = FgdaBlock<T>(ps, "decoder.stage" + std::to_string(i), cfgs[i], state_dim);
      if (i < 3) {
        lateral_[i] = Conv2d<T>(ps, "decoder.lateral" + std::to_string(i), cfgs[i + 1].out_channels,
                                cfgs[i].out_channels, 1);
      }
    }
    head_ = Conv2d<T>(ps, "head", cfgs[0].out_channels, num_classes, 1, {}, false);
  }

  const std::array<FGDABlockConfig, 4>& configs() const { return cfgs_; }
  const FgdaBlock<T>& block(int i) const { return blocks_[i]; }
  FgdaBlock<T>& block(int i) { return blocks_[i]; }

  /// Z at stride 4, plus the per-stage PDA outputs.
  FeatureMap<T> decode_features(const FeaturePyramidPair<T>& fp, std::array<Var<T>, 4>* pda_out = nullptr) const {
    Var<T> prev;
    for (int i = 3; i >= 0; --i) {
      const auto& a = fp.t1[i];
      const auto& b = fp.t2[i];
      if (a.channels() != cfgs_[i].in_channels) {
        throw std::invalid_argument("decoder: stage " + std::to_string(i) + " expects " +
                                    std::to_string(cfgs_[i].in_channels) + " channels, got " +
                                    std::to_string(a.channels()));
      }
      Var<T> lateral;
      if (prev.defined()) {
        lateral = resize_bilinear(lateral_[i](prev), a.height(), a.width());
      }
      prev = blocks_[i](a, b, lateral, pda_out ? &(*pda_out)[i] : nullptr);
    }
    return {prev, fp.t1[0].scale};
  }

  /// Bias-free 1x1 head followed by bilinear upsampling to (out_h, out_w).
  Var<T> classify(const Var<T>& z, int out_h, int out_w) const { return resize_bilinear(head_(z), out_h, out_w); }

  DecoderOutput<T> decode(const FeaturePyramidPair<T>& fp) const {
    DecoderOutput<T> out;
    out.z = decode_features(fp, &out.pda);
    out.logits = classify(out.z.data, out.z.height() * out.z.scale, out.z.width() * out.z.scale);
    return out;
  }

  const Conv2d<T>& head() const { return head_; }

 private:
  std::array<FGDABlockConfig, 4> cfgs_;
  std::array<FgdaBlock<T>, 4> blocks_;
  std::array<Conv2d<T>, 3> lateral_;
  Conv2d<T> head_;
};

/// Checked entry point for a pyramid given as a vector (must have 4 stages).
template <class T>
DecoderOutput<T> decode(const FgdaDecoder<T>& dec, const std::vector<FeatureMap<T>>& t1,
                        const std::vector<FeatureMap<T>>& t2) {
  if (t1.size() != 4 || t2.size() != 4) {
    throw std::invalid_argument("decode: pyramid must have 4 stages, got " + std::to_string(t1.size()));
  }
  FeaturePyramidPair<T> fp;
  for (int i = 0; i < 4; ++i) {
    fp.t1[i] = t1[i];
    fp.t2[i] = t2[i];
  }
  return dec.decode(fp);
}

}  // namespace fcd
