#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/conv.hpp"
#include "fcd/ops.hpp"

namespace fcd {

/// Portable uniform sampler on top of mt19937_64 (no library-defined distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi_inclusive - lo + 1));
  }
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Owns every trainable tensor of a model, in registration order.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Var<T> zeros(const std::string& name, Shape shape) { return add(name, Tensor<T>(shape)); }

  Var<T> filled(const std::string& name, Shape shape, T value) { return add(name, Tensor<T>(shape, value)); }

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Var<T> fan_in_uniform(const std::string& name, Shape shape, int fan_in) {
    Tensor<T> t(shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.vec()) v = static_cast<T>(rng_.uniform(-bound, bound));
    return add(name, std::move(t));
  }

  Var<T> uniform(const std::string& name, Shape shape, double lo, double hi) {
    Tensor<T> t(shape);
    for (auto& v : t.vec()) v = static_cast<T>(rng_.uniform(lo, hi));
    return add(name, std::move(t));
  }

  Var<T> add(const std::string& name, Tensor<T> value) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    }
    Var<T> v(std::move(value), true);
    params_.push_back({name, v});
    return v;
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedParam<T>>& params() { return params_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  const Var<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p.var;
    }
    return nullptr;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  std::vector<NamedParam<T>> params_;
};

/// Conv layer with zero-initialized bias.
template <class T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  ConvGeometry geo;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int kernel, ConvGeometry g = {},
         bool with_bias = true)
      : geo(g) {
    if (in_ch % g.groups != 0 || out_ch % g.groups != 0) {
      throw std::invalid_argument(name + ": channels " + std::to_string(in_ch) + "->" + std::to_string(out_ch) +
                                  " not divisible by groups " + std::to_string(g.groups));
    }
    const int cin_g = in_ch / g.groups;
    weight = ps.fan_in_uniform(name + ".weight", Shape{out_ch, cin_g, kernel, kernel}, cin_g * kernel * kernel);
    if (with_bias) bias = ps.zeros(name + ".bias", Shape{out_ch, 1, 1, 1});
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, geo); }
  int out_channels() const { return weight.shape().n; }
};

/// 3x3 "same" geometry for a given dilation.
inline ConvGeometry same3(int dilation = 1, int groups = 1) { return ConvGeometry{1, dilation, dilation, groups}; }

}  // namespace fcd
