#pragma once

// Diagonal linear recurrence over the row-major flattened spatial sequence.
// For each channel c and state s:
//   h_t[s] = decay[c,s] * h_{t-1}[s] + in[c,s] * x_t
//   y_t    = sum_s out[c,s] * h_t[s]
// with decay = sigmoid(decay_logit). Cost is linear in H*W.

#include <stdexcept>
#include <vector>

#include "fcd/ops.hpp"

namespace fcd {

/// x: (N, C, H, W); decay_logit, in_w, out_w: (C, S, 1, 1). `reverse` scans from the last pixel.
template <class T>
Var<T> linear_scan(const Var<T>& x, const Var<T>& decay_logit, const Var<T>& in_w, const Var<T>& out_w,
                   bool reverse) {
  const Shape xs = x.shape();
  const Shape ps = decay_logit.shape();
  if (ps.n != xs.c || !(in_w.shape() == ps) || !(out_w.shape() == ps)) {
    throw std::invalid_argument("linear_scan: parameter shape " + ps.str() + " does not match input " + xs.str());
  }
  const int states = ps.c;
  const int len = static_cast<int>(xs.plane());
  Tensor<T> out(xs);
  std::vector<T> decay(ps.numel());
  for (std::size_t i = 0; i < decay.size(); ++i) decay[i] = sigmoid_scalar(decay_logit.value()[i]);

  const auto& xv = x.value();
  std::vector<T> h(states);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* xin = xv.data() + (static_cast<std::size_t>(n) * xs.c + c) * len;
      T* y = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * len;
      const T* lam = decay.data() + static_cast<std::size_t>(c) * states;
      const T* bet = in_w.value().data() + static_cast<std::size_t>(c) * states;
      const T* gam = out_w.value().data() + static_cast<std::size_t>(c) * states;
      std::fill(h.begin(), h.end(), T(0));
      for (int step = 0; step < len; ++step) {
        const int t = reverse ? len - 1 - step : step;
        const T xt = xin[t];
        T acc = 0;
        for (int s = 0; s < states; ++s) {
          h[s] = lam[s] * h[s] + bet[s] * xt;
          acc += gam[s] * h[s];
        }
        y[t] = acc;
      }
    }

  return Var<T>::make(std::move(out), {x, decay_logit, in_w, out_w},
                      [xs, states, len, reverse, decay = std::move(decay)](Node<T>& self) {
                        Tensor<T>* gx = parent_grad(self, 0);
                        Tensor<T>* gl = parent_grad(self, 1);
                        Tensor<T>* gb = parent_grad(self, 2);
                        Tensor<T>* gg = parent_grad(self, 3);
                        const auto& X = self.parents[0]->value;
                        const auto& B = self.parents[2]->value;
                        const auto& Gm = self.parents[3]->value;
                        std::vector<T> hist(static_cast<std::size_t>(len + 1) * states);
                        std::vector<T> carry(states), dlam(states);
                        for (int n = 0; n < xs.n; ++n)
                          for (int c = 0; c < xs.c; ++c) {
                            const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * len;
                            const T* xin = X.data() + base;
                            const T* dy = self.grad.data() + base;
                            const T* lam = decay.data() + static_cast<std::size_t>(c) * states;
                            const T* bet = B.data() + static_cast<std::size_t>(c) * states;
                            const T* gam = Gm.data() + static_cast<std::size_t>(c) * states;
                            // hist[k] holds the state after k steps
                            std::fill_n(hist.begin(), states, T(0));
                            for (int step = 0; step < len; ++step) {
                              const int t = reverse ? len - 1 - step : step;
                              for (int s = 0; s < states; ++s) {
                                hist[(step + 1) * states + s] = lam[s] * hist[step * states + s] + bet[s] * xin[t];
                              }
                            }
                            std::fill(carry.begin(), carry.end(), T(0));
                            std::fill(dlam.begin(), dlam.end(), T(0));
                            for (int step = len - 1; step >= 0; --step) {
                              const int t = reverse ? len - 1 - step : step;
                              T dxt = 0;
                              for (int s = 0; s < states; ++s) {
                                const T ht = hist[(step + 1) * states + s];
                                const T hprev = hist[step * states + s];
                                const T dh = gam[s] * dy[t] + carry[s];
                                if (gg) (*gg)[static_cast<std::size_t>(c) * states + s] += dy[t] * ht;
                                if (gb) (*gb)[static_cast<std::size_t>(c) * states + s] += dh * xin[t];
                                dlam[s] += dh * hprev;
                                dxt += bet[s] * dh;
                                carry[s] = lam[s] * dh;
                              }
                              if (gx) (*gx)[base + t] += dxt;
                            }
                            if (gl) {
                              for (int s = 0; s < states; ++s) {
                                (*gl)[static_cast<std::size_t>(c) * states + s] += dlam[s] * lam[s] * (T(1) - lam[s]);
                              }
                            }
                          }
                      });
}

}  // namespace fcd
