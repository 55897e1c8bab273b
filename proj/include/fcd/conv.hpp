#pragma once

// 2-D convolution (cross-correlation) with stride, zero padding, dilation and
// groups, lowered to im2col + GEMM per (sample, group).

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/autograd.hpp"

namespace fcd {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out_size(int in, int k, const ConvGeometry& g) {
  return (in + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
}

// cols[(ci*kh + ky)*kw + kx][oy*ow + ox]
template <class T>
void im2col(const T* img, int channels, int h, int w, int kh, int kw, int oh, int ow, const ConvGeometry& g,
            T* cols) {
  for (int ci = 0; ci < channels; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* row = cols + (static_cast<std::size_t>(ci * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          if (iy < 0 || iy >= h) {
            std::fill_n(row + oy * ow, ow, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            row[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, int channels, int h, int w, int kh, int kw, int oh, int ow, const ConvGeometry& g,
                T* img) {
  for (int ci = 0; ci < channels; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(ci * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          if (iy < 0 || iy >= h) continue;
          T* dst = img + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

/// x: (N, Cin, H, W); weight: (Cout, Cin/groups, KH, KW); bias: (Cout,1,1,1) or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geo) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (geo.groups < 1 || xs.c % geo.groups != 0 || ws.n % geo.groups != 0) {
    throw std::invalid_argument("conv2d: channels not divisible by groups");
  }
  if (ws.c != xs.c / geo.groups) {
    throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  const int oh = detail::conv_out_size(xs.h, ws.h, geo);
  const int ow = detail::conv_out_size(xs.w, ws.w, geo);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output for input " + xs.str());
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().size() != static_cast<std::size_t>(ws.n)) {
    throw std::invalid_argument("conv2d: bias size mismatch");
  }

  const int cin_g = xs.c / geo.groups;
  const int cout_g = ws.n / geo.groups;
  const int kk = cin_g * ws.h * ws.w;
  const int opix = oh * ow;
  Shape os{xs.n, ws.n, oh, ow};
  Tensor<T> out(os);
  std::vector<T> cols(static_cast<std::size_t>(kk) * opix);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  for (int n = 0; n < xs.n; ++n) {
    for (int g = 0; g < geo.groups; ++g) {
      const T* img = xv.data() + (static_cast<std::size_t>(n) * xs.c + g * cin_g) * xs.plane();
      detail::im2col(img, cin_g, xs.h, xs.w, ws.h, ws.w, oh, ow, geo, cols.data());
      Eigen::Map<const detail::RowMat<T>> W(wv.data() + static_cast<std::size_t>(g) * cout_g * kk, cout_g, kk);
      Eigen::Map<const detail::RowMat<T>> C(cols.data(), kk, opix);
      Eigen::Map<detail::RowMat<T>> O(out.data() + (static_cast<std::size_t>(n) * ws.n + g * cout_g) * opix, cout_g,
                                      opix);
      O.noalias() = W * C;
    }
    if (has_bias) {
      for (int co = 0; co < ws.n; ++co) {
        T b = bias.value()[co];
        T* o = out.data() + (static_cast<std::size_t>(n) * ws.n + co) * opix;
        for (int p = 0; p < opix; ++p) o[p] += b;
      }
    }
  }

  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<T>::make(std::move(out), parents, [geo, xs, ws, oh, ow, cin_g, cout_g, kk, opix, has_bias](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    Tensor<T>* gw = parent_grad(self, 1);
    Tensor<T>* gb = has_bias ? parent_grad(self, 2) : nullptr;
    const auto& X = self.parents[0]->value;
    const auto& Wt = self.parents[1]->value;
    const auto& G = self.grad;
    std::vector<T> cols(static_cast<std::size_t>(kk) * opix);
    std::vector<T> dcols(gx ? cols.size() : 0);
    for (int n = 0; n < xs.n; ++n) {
      for (int g = 0; g < geo.groups; ++g) {
        Eigen::Map<const detail::RowMat<T>> dO(G.data() + (static_cast<std::size_t>(n) * ws.n + g * cout_g) * opix,
                                               cout_g, opix);
        if (gw) {
          const T* img = X.data() + (static_cast<std::size_t>(n) * xs.c + g * cin_g) * xs.plane();
          detail::im2col(img, cin_g, xs.h, xs.w, ws.h, ws.w, oh, ow, geo, cols.data());
          Eigen::Map<const detail::RowMat<T>> C(cols.data(), kk, opix);
          Eigen::Map<detail::RowMat<T>> dW(gw->data() + static_cast<std::size_t>(g) * cout_g * kk, cout_g, kk);
          dW.noalias() += dO * C.transpose();
        }
        if (gx) {
          Eigen::Map<const detail::RowMat<T>> W(Wt.data() + static_cast<std::size_t>(g) * cout_g * kk, cout_g, kk);
          Eigen::Map<detail::RowMat<T>> dC(dcols.data(), kk, opix);
          dC.noalias() = W.transpose() * dO;
          T* dimg = gx->data() + (static_cast<std::size_t>(n) * xs.c + g * cin_g) * xs.plane();
          detail::col2im_add(dcols.data(), cin_g, xs.h, xs.w, ws.h, ws.w, oh, ow, geo, dimg);
        }
      }
      if (gb) {
        for (int co = 0; co < ws.n; ++co) {
          const T* d = G.data() + (static_cast<std::size_t>(n) * ws.n + co) * opix;
          T acc = 0;
          for (int p = 0; p < opix; ++p) acc += d[p];
          (*gb)[co] += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, ConvGeometry geo = {}) {
  return conv2d(x, weight, Var<T>(), geo);
}

}  // namespace fcd
