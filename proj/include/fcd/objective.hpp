#pragma once

// Co-training objective:
//   L_main  = 0.5 CE(logits, Y) + 0.5 Dice(softmax(logits), Y)
//   M_hard  = 1(max_k p_k < tau), p = softmax(final logits), label != ignore
//   L_aux   = sum_{M_hard} CE(S, Y) / (|M_hard| + eps)
//   L_total = L_main + lambda * L_aux
// Labels equal to the ignore value are excluded everywhere.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fcd/data_model.hpp"
#include "fcd/ops.hpp"

namespace fcd {

struct LossConfig {
  double tau = 0.80;
  double lambda_aux = 0.4;
  double ce_weight = 0.5;
  double dice_weight = 0.5;
  double dice_smooth = 1.0;
  double epsilon = 1e-6;
  int ignore_index = kIgnoreLabel;

  void validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("loss.tau must be in (0,1)");
    if (!(lambda_aux >= 0.0)) throw std::invalid_argument("loss.lambda_aux must be >= 0");
    if (!(dice_smooth >= 0.0)) throw std::invalid_argument("loss.dice_smooth must be >= 0");
  }
};

/// Labels for a batch: (N, 1, H, W).
using LabelTensor = Tensor<std::uint8_t>;

template <class T>
struct LossResult {
  Var<T> value;
  bool all_ignored = false;
};

namespace detail {

inline void check_label_shape(const Shape& logits, const LabelTensor& labels, const char* what) {
  const Shape ls = labels.shape();
  if (ls.n != logits.n || ls.c != 1 || ls.h != logits.h || ls.w != logits.w) {
    throw std::invalid_argument(std::string(what) + ": labels " + ls.str() + " do not match logits " + logits.str());
  }
}

// Softmax over the class axis for one pixel, in double.
template <class T>
void pixel_softmax(const T* base, int classes, std::size_t plane, double* out) {
  double mx = base[0];
  for (int k = 1; k < classes; ++k) mx = std::max(mx, static_cast<double>(base[k * plane]));
  double z = 0;
  for (int k = 0; k < classes; ++k) {
    out[k] = std::exp(static_cast<double>(base[k * plane]) - mx);
    z += out[k];
  }
  for (int k = 0; k < classes; ++k) out[k] /= z;
}

}  // namespace detail

/// Per-pixel softmax probabilities, (N, K, H, W).
template <class T>
Tensor<double> softmax_probabilities(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  const std::size_t plane = s.plane();
  Tensor<double> p(s);
  std::vector<double> buf(s.c);
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + i;
      detail::pixel_softmax(logits.data() + base, s.c, plane, buf.data());
      for (int k = 0; k < s.c; ++k) p[base + k * plane] = buf[k];
    }
  return p;
}

template <class T>
LossResult<T> main_loss(const Var<T>& logits, const LabelTensor& labels, const LossConfig& cfg) {
  const Shape s = logits.shape();
  detail::check_label_shape(s, labels, "main_loss");
  const int K = s.c;
  const std::size_t plane = s.plane();
  Tensor<double> p = softmax_probabilities(logits.value());

  std::size_t valid = 0;
  double ce = 0;
  std::vector<double> inter(K, 0.0), psum(K, 0.0), ysum(K, 0.0);
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = labels[static_cast<std::size_t>(n) * plane + i];
      if (y == cfg.ignore_index) continue;
      if (y >= K) throw std::invalid_argument("main_loss: label " + std::to_string(y) + " >= class count");
      ++valid;
      const std::size_t base = static_cast<std::size_t>(n) * K * plane + i;
      ce -= std::log(std::max(p[base + y * plane], 1e-300));
      for (int k = 0; k < K; ++k) psum[k] += p[base + k * plane];
      inter[y] += p[base + y * plane];
      ysum[y] += 1.0;
    }
  if (valid == 0) {
    Tensor<T> zero(Shape{1, 1, 1, 1});
    return {Var<T>::make(std::move(zero), {logits}, [](Node<T>&) {}), true};
  }
  ce /= static_cast<double>(valid);
  std::vector<int> present;
  for (int k = 0; k < K; ++k) {
    if (ysum[k] > 0) present.push_back(k);
  }
  double dice_mean = 0;
  for (int k : present) dice_mean += (2 * inter[k] + cfg.dice_smooth) / (psum[k] + ysum[k] + cfg.dice_smooth);
  dice_mean /= static_cast<double>(present.size());
  const double loss = cfg.ce_weight * ce + cfg.dice_weight * (1.0 - dice_mean);

  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(loss));
  return {Var<T>::make(std::move(out), {logits},
                       [cfg, s, K, plane, valid, labels, p = std::move(p), inter, psum, ysum,
                        present](Node<T>& self) {
                         Tensor<T>* g = parent_grad(self, 0);
                         if (!g) return;
                         const double upstream = self.grad[0];
                         // d dice_k / d p_ik = (2[y=k] D_k - N_k) / D_k^2 for present k
                         std::vector<double> dk_hit(K, 0.0), dk_base(K, 0.0);
                         const double np = static_cast<double>(present.size());
                         for (int k : present) {
                           const double num = 2 * inter[k] + cfg.dice_smooth;
                           const double den = psum[k] + ysum[k] + cfg.dice_smooth;
                           dk_base[k] = -num / (den * den);
                           dk_hit[k] = 2.0 / den;
                         }
                         std::vector<double> gp(K);
                         for (int n = 0; n < s.n; ++n)
                           for (std::size_t i = 0; i < plane; ++i) {
                             const int y = labels[static_cast<std::size_t>(n) * plane + i];
                             if (y == cfg.ignore_index) continue;
                             const std::size_t base = static_cast<std::size_t>(n) * K * plane + i;
                             // gradient w.r.t. probabilities of the Dice term
                             double dot = 0;
                             for (int k = 0; k < K; ++k) {
                               double d = dk_base[k] + (k == y ? dk_hit[k] : 0.0);
                               gp[k] = -cfg.dice_weight * d / np;
                               dot += gp[k] * p[base + k * plane];
                             }
                             for (int j = 0; j < K; ++j) {
                               const double pj = p[base + j * plane];
                               double dz = pj * (gp[j] - dot);
                               dz += cfg.ce_weight * (pj - (j == y ? 1.0 : 0.0)) / static_cast<double>(valid);
                               (*g)[base + j * plane] += static_cast<T>(upstream * dz);
                             }
                           }
                       }),
          false};
}

inline bool is_hard(double p_max, double tau) { return p_max < tau; }

/// Mask (N, 1, H, W) from precomputed probabilities (N, K, H, W).
inline LabelTensor hard_mask_from_probabilities(const Tensor<double>& probs, const LabelTensor& labels,
                                                const LossConfig& cfg) {
  const Shape s = probs.shape();
  detail::check_label_shape(s, labels, "hard_mask");
  const std::size_t plane = s.plane();
  LabelTensor mask(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t li = static_cast<std::size_t>(n) * plane + i;
      if (labels[li] == cfg.ignore_index) continue;
      double pmax = 0;
      for (int k = 0; k < s.c; ++k) pmax = std::max(pmax, probs[(static_cast<std::size_t>(n) * s.c + k) * plane + i]);
      mask[li] = is_hard(pmax, cfg.tau) ? 1 : 0;
    }
  return mask;
}

/// Detached selection: no gradient flows through the mask.
template <class T>
LabelTensor hard_mask(const Tensor<T>& logits, const LabelTensor& labels, const LossConfig& cfg) {
  return hard_mask_from_probabilities(softmax_probabilities(logits), labels, cfg);
}

inline std::size_t mask_count(const LabelTensor& mask) {
  std::size_t c = 0;
  for (auto v : mask.vec()) c += v ? 1 : 0;
  return c;
}

template <class T>
Var<T> aux_loss(const Var<T>& scores, const LabelTensor& labels, const LabelTensor& mask, const LossConfig& cfg) {
  const Shape s = scores.shape();
  detail::check_label_shape(s, labels, "aux_loss");
  require_same_shape(mask.shape(), labels.shape(), "aux_loss mask");
  const int K = s.c;
  const std::size_t plane = s.plane();
  const double denom = static_cast<double>(mask_count(mask)) + cfg.epsilon;
  std::vector<double> buf(K);
  double total = 0;
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t li = static_cast<std::size_t>(n) * plane + i;
      if (!mask[li]) continue;
      const int y = labels[li];
      if (y == cfg.ignore_index) continue;
      if (y >= K) throw std::invalid_argument("aux_loss: label " + std::to_string(y) + " >= class count");
      detail::pixel_softmax(scores.value().data() + static_cast<std::size_t>(n) * K * plane + i, K, plane, buf.data());
      total -= std::log(std::max(buf[y], 1e-300));
    }
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total / denom));
  return Var<T>::make(std::move(out), {scores}, [cfg, s, K, plane, denom, labels, mask](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    const double upstream = self.grad[0];
    const auto& S = self.parents[0]->value;
    std::vector<double> buf(K);
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t li = static_cast<std::size_t>(n) * plane + i;
        if (!mask[li] || labels[li] == cfg.ignore_index) continue;
        const int y = labels[li];
        const std::size_t base = static_cast<std::size_t>(n) * K * plane + i;
        detail::pixel_softmax(S.data() + base, K, plane, buf.data());
        for (int k = 0; k < K; ++k) {
          (*g)[base + k * plane] += static_cast<T>(upstream * (buf[k] - (k == y ? 1.0 : 0.0)) / denom);
        }
      }
  });
}

template <class T>
Var<T> total_loss(const Var<T>& main, const Var<T>& aux, const LossConfig& cfg) {
  return add(main, scale(aux, static_cast<T>(cfg.lambda_aux)));
}

inline double total_loss(double main, double aux, const LossConfig& cfg) { return main + cfg.lambda_aux * aux; }

}  // namespace fcd
