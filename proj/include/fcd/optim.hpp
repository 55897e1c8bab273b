#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fcd/nn.hpp"

namespace fcd {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay Adam over every parameter in a store.
template <class T>
class AdamW {
 public:
  AdamW(ParamStore<T>& ps, AdamWConfig cfg) : ps_(&ps), cfg_(cfg) {
    for (const auto& p : ps.params()) {
      m_.emplace_back(p.var.value().size(), 0.0);
      v_.emplace_back(p.var.value().size(), 0.0);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long steps() const { return t_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& params = ps_->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var<T>& var = params[i].var;
      if (!var.has_grad()) continue;
      Tensor<T>& w = var.mutable_value();
      const Tensor<T>& g = var.grad_ref();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * gk * gk;
        const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        const double wk = static_cast<double>(w[k]);
        w[k] = static_cast<T>(wk - cfg_.lr * (update + cfg_.weight_decay * wk));
      }
    }
  }

 private:
  ParamStore<T>* ps_;
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// lr0 * 0.5 * (1 + cos(pi * epoch / (epochs - 1))); reaches 0 on the last epoch.
inline double cosine_lr(double lr0, int epoch, int epochs) {
  if (epochs < 1) throw std::invalid_argument("cosine_lr: epochs must be >= 1");
  if (epochs == 1) return lr0;
  const double pi = 3.141592653589793;
  return lr0 * 0.5 * (1.0 + std::cos(pi * static_cast<double>(epoch) / static_cast<double>(epochs - 1)));
}

}  // namespace fcd
