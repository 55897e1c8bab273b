#pragma once

// Differentiable tensor ops. Binary arithmetic broadcasts any axis of size 1.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcd/autograd.hpp"

namespace fcd {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  Shape out;
  int* dst[4] = {&out.n, &out.c, &out.h, &out.w};
  for (int ax = 0; ax < 4; ++ax) {
    int da = a[ax], db = b[ax];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(std::string(what) + ": cannot broadcast " + a.str() + " with " + b.str());
    }
    *dst[ax] = std::max(da, db);
  }
  return out;
}

struct Strides {
  std::size_t n, c, h, w;
};

inline Strides broadcast_strides(const Shape& s) {
  std::size_t w = s.w == 1 ? 0 : 1;
  std::size_t h = s.h == 1 ? 0 : static_cast<std::size_t>(s.w);
  std::size_t c = s.c == 1 ? 0 : static_cast<std::size_t>(s.h) * s.w;
  std::size_t n = s.n == 1 ? 0 : static_cast<std::size_t>(s.c) * s.h * s.w;
  return {n, c, h, w};
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  if (a == out && b == out) {
    for (std::size_t i = 0; i < out.numel(); ++i) f(i, i, i);
    return;
  }
  Strides sa = broadcast_strides(a), sb = broadcast_strides(b);
  std::size_t o = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x, ++o) {
          f(o, n * sa.n + c * sa.c + y * sa.h + x * sa.w, n * sb.n + c * sb.c + y * sb.h + x * sb.w);
        }
}

template <class T, class Fwd, class DA, class DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* what, Fwd fwd, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), what);
  Tensor<T> out(out_shape);
  const auto& av = a.value();
  const auto& bv = b.value();
  for_each_broadcast(out_shape, a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(av[i], bv[j]); });
  return Var<T>::make(std::move(out), {a, b}, [da, db](Node<T>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    Tensor<T>* ga = parent_grad(self, 0);
    Tensor<T>* gb = parent_grad(self, 1);
    const auto& g = self.grad;
    for_each_broadcast(self.value.shape(), A.shape(), B.shape(),
                       [&](std::size_t o, std::size_t i, std::size_t j) {
                         if (ga) (*ga)[i] += g[o] * da(A[i], B[j]);
                         if (gb) (*gb)[j] += g[o] * db(A[i], B[j]);
                       });
  });
}

template <class T, class Fwd, class Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv) {
  const auto& av = a.value();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return Var<T>::make(std::move(out), {a}, [deriv](Node<T>& self) {
    Tensor<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

/// Elementwise maximum; ties route the gradient to `a`.
template <class T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      a, b, "maximum", [](T x, T y) { return x >= y ? x : y; }, [](T x, T y) { return x >= y ? T(1) : T(0); },
      [](T x, T y) { return x >= y ? T(0) : T(1); });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> abs(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); }, [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <class T>
inline T sigmoid_scalar(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> silu(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return x * sigmoid_scalar(x); },
      [](T x, T) {
        T s = sigmoid_scalar(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// Channel-axis concatenation; all inputs share N, H, W.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  Shape s = xs.front().shape();
  int total_c = 0;
  for (const auto& x : xs) {
    const Shape& t = x.shape();
    if (t.n != s.n || t.h != s.h || t.w != s.w) {
      throw std::invalid_argument("concat_channels: spatial/batch mismatch " + s.str() + " vs " + t.str());
    }
    total_c += t.c;
  }
  Shape os{s.n, total_c, s.h, s.w};
  Tensor<T> out(os);
  const std::size_t plane = s.plane();
  std::vector<int> offsets;
  int off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const auto& v = x.value();
    for (int n = 0; n < s.n; ++n) {
      std::copy_n(v.data() + static_cast<std::size_t>(n) * x.shape().c * plane, x.shape().c * plane,
                  out.data() + (static_cast<std::size_t>(n) * total_c + off) * plane);
    }
    off += x.shape().c;
  }
  return Var<T>::make(std::move(out), xs, [offsets, total_c, plane](Node<T>& self) {
    const int batch = self.value.shape().n;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Tensor<T>* g = parent_grad(self, i);
      if (!g) continue;
      const int c = self.parents[i]->value.shape().c;
      for (int n = 0; n < batch; ++n) {
        const T* src = self.grad.data() + (static_cast<std::size_t>(n) * total_c + offsets[i]) * plane;
        T* dst = g->data() + static_cast<std::size_t>(n) * c * plane;
        for (std::size_t k = 0; k < c * plane; ++k) dst[k] += src[k];
      }
    }
  });
}

/// Mean over H, W -> (N, C, 1, 1).
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  const auto& v = x.value();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
    T acc = 0;
    for (std::size_t k = 0; k < plane; ++k) acc += v[nc * plane + k];
    out[nc] = acc / static_cast<T>(plane);
  }
  return Var<T>::make(std::move(out), {x}, [plane](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t nc = 0; nc < self.value.size(); ++nc) {
      const T d = self.grad[nc] / static_cast<T>(plane);
      for (std::size_t k = 0; k < plane; ++k) (*g)[nc * plane + k] += d;
    }
  });
}

/// Max over H, W -> (N, C, 1, 1); first maximal element receives the gradient.
template <class T>
Var<T> global_max_pool(const Var<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  std::vector<std::size_t> arg(out.size());
  const auto& v = x.value();
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    std::size_t best = nc * plane;
    for (std::size_t k = 1; k < plane; ++k) {
      if (v[nc * plane + k] > v[best]) best = nc * plane + k;
    }
    arg[nc] = best;
    out[nc] = v[best];
  }
  return Var<T>::make(std::move(out), {x}, [arg = std::move(arg)](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t nc = 0; nc < arg.size(); ++nc) (*g)[arg[nc]] += self.grad[nc];
  });
}

/// Mean over C -> (N, 1, H, W).
template <class T>
Var<T> channel_mean(const Var<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  const std::size_t plane = s.plane();
  const auto& v = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (std::size_t k = 0; k < plane; ++k)
        out[n * plane + k] += v[(static_cast<std::size_t>(n) * s.c + c) * plane + k];
  for (auto& o : out.vec()) o /= static_cast<T>(s.c);
  return Var<T>::make(std::move(out), {x}, [s, plane](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (std::size_t k = 0; k < plane; ++k)
          (*g)[(static_cast<std::size_t>(n) * s.c + c) * plane + k] += self.grad[n * plane + k] / static_cast<T>(s.c);
  });
}

/// Max over C -> (N, 1, H, W).
template <class T>
Var<T> channel_max(const Var<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  const std::size_t plane = s.plane();
  std::vector<int> arg(out.size(), 0);
  const auto& v = x.value();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t k = 0; k < plane; ++k) {
      T best = v[static_cast<std::size_t>(n) * s.c * plane + k];
      int bc = 0;
      for (int c = 1; c < s.c; ++c) {
        T val = v[(static_cast<std::size_t>(n) * s.c + c) * plane + k];
        if (val > best) {
          best = val;
          bc = c;
        }
      }
      out[n * plane + k] = best;
      arg[n * plane + k] = bc;
    }
  return Var<T>::make(std::move(out), {x}, [s, plane, arg = std::move(arg)](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t k = 0; k < plane; ++k)
        (*g)[(static_cast<std::size_t>(n) * s.c + arg[n * plane + k]) * plane + k] += self.grad[n * plane + k];
  });
}

/// Mean over the batch axis -> (1, C, H, W).
template <class T>
Var<T> batch_mean(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  Tensor<T> out(Shape{1, s.c, s.h, s.w});
  const auto& v = x.value();
  const bool uniform = std::all_of(v.vec().begin() + per, v.vec().end(),
                                   [&, i = std::size_t{0}](T a) mutable { return a == v[i++ % per]; });
  if (uniform) {
    // identical rows: the mean is the row itself, bit for bit
    std::copy(v.vec().begin(), v.vec().begin() + per, out.vec().begin());
  } else {
    for (int n = 0; n < s.n; ++n)
      for (std::size_t k = 0; k < per; ++k) out[k] += v[n * per + k];
    for (auto& o : out.vec()) o /= static_cast<T>(s.n);
  }
  return Var<T>::make(std::move(out), {x}, [s, per](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t k = 0; k < per; ++k) (*g)[n * per + k] += self.grad[k] / static_cast<T>(s.n);
  });
}

/// Sum of all elements -> scalar.
template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().vec()) acc += v;
  return Var<T>::make(Tensor<T>(Shape{1, 1, 1, 1}, acc), {x}, [](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    for (auto& v : g->vec()) v += self.grad[0];
  });
}

namespace detail {

// Source taps for align_corners=false bilinear resize along one axis.
struct LinearTap {
  int i0, i1;
  double w0, w1;
};

inline std::vector<LinearTap> linear_taps(int in, int out) {
  std::vector<LinearTap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    int i1 = std::min(i0 + 1, in - 1);
    double l1 = src - i0;
    taps[o] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize to (out_h, out_w), half-pixel centers (align_corners = false).
template <class T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  const Shape s = x.shape();
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: non-positive output size");
  auto ty = detail::linear_taps(s.h, out_h);
  auto tx = detail::linear_taps(s.w, out_w);
  Shape os{s.n, s.c, out_h, out_w};
  Tensor<T> out(os);
  const auto& v = x.value();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = v.data() + static_cast<std::size_t>(nc) * s.plane();
    T* dst = out.data() + static_cast<std::size_t>(nc) * os.plane();
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        dst[oy * out_w + ox] =
            static_cast<T>(a.w0 * (b.w0 * src[a.i0 * s.w + b.i0] + b.w1 * src[a.i0 * s.w + b.i1]) +
                           a.w1 * (b.w0 * src[a.i1 * s.w + b.i0] + b.w1 * src[a.i1 * s.w + b.i1]));
      }
    }
  }
  return Var<T>::make(std::move(out), {x}, [s, os, ty, tx](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      T* dst = g->data() + static_cast<std::size_t>(nc) * s.plane();
      const T* src = self.grad.data() + static_cast<std::size_t>(nc) * os.plane();
      for (int oy = 0; oy < os.h; ++oy) {
        const auto& a = ty[oy];
        for (int ox = 0; ox < os.w; ++ox) {
          const auto& b = tx[ox];
          const double d = src[oy * os.w + ox];
          dst[a.i0 * s.w + b.i0] += static_cast<T>(d * a.w0 * b.w0);
          dst[a.i0 * s.w + b.i1] += static_cast<T>(d * a.w0 * b.w1);
          dst[a.i1 * s.w + b.i0] += static_cast<T>(d * a.w1 * b.w0);
          dst[a.i1 * s.w + b.i1] += static_cast<T>(d * a.w1 * b.w1);
        }
      }
    }
  });
}

template <class T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
  return resize_bilinear(x, x.shape().h * factor, x.shape().w * factor);
}

/// L2-normalizes every (n, :, y, x) fibre: v / max(||v||, eps).
template <class T>
Var<T> l2_normalize_channels(const Var<T>& x, T eps = T(1e-12)) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  std::vector<T> norms(static_cast<std::size_t>(s.n) * plane);
  const auto& v = x.value();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t k = 0; k < plane; ++k) {
      T acc = 0;
      for (int c = 0; c < s.c; ++c) {
        T e = v[(static_cast<std::size_t>(n) * s.c + c) * plane + k];
        acc += e * e;
      }
      T nrm = std::max(std::sqrt(acc), eps);
      norms[n * plane + k] = nrm;
      for (int c = 0; c < s.c; ++c) {
        std::size_t i = (static_cast<std::size_t>(n) * s.c + c) * plane + k;
        out[i] = v[i] / nrm;
      }
    }
  return Var<T>::make(std::move(out), {x}, [s, plane, eps, norms = std::move(norms)](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t k = 0; k < plane; ++k) {
        const T nrm = norms[n * plane + k];
        auto idx = [&](int c) { return (static_cast<std::size_t>(n) * s.c + c) * plane + k; };
        if (nrm <= eps) {
          for (int c = 0; c < s.c; ++c) (*g)[idx(c)] += self.grad[idx(c)] / nrm;
          continue;
        }
        T dot = 0;
        for (int c = 0; c < s.c; ++c) dot += self.grad[idx(c)] * y[idx(c)];
        for (int c = 0; c < s.c; ++c) (*g)[idx(c)] += (self.grad[idx(c)] - y[idx(c)] * dot) / nrm;
      }
  });
}

/// Row-wise Norm(rows + offset) for unit rows (K, d, 1, 1) and an offset
/// broadcastable to them. When the offset is exactly zero the rows are
/// returned bit-for-bit, since renormalizing a unit vector is the identity.
template <class T>
Var<T> renormalized_residual(const Var<T>& rows, const Var<T>& offset) {
  bool zero = true;
  for (T v : offset.value().vec()) {
    if (v != T(0)) {
      zero = false;
      break;
    }
  }
  Var<T> shifted = add(rows, offset);
  if (!zero) return l2_normalize_channels(shifted);
  // Same gradient as the normalizing path, evaluated at a unit vector.
  Tensor<T> out = rows.value();
  return Var<T>::make(std::move(out), {shifted}, [](Node<T>& self) {
    Tensor<T>* g = parent_grad(self, 0);
    if (!g) return;
    const Shape s = self.value.shape();
    const std::size_t plane = s.plane();
    const auto& y = self.value;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t k = 0; k < plane; ++k) {
        auto idx = [&](int c) { return (static_cast<std::size_t>(n) * s.c + c) * plane + k; };
        T dot = 0;
        for (int c = 0; c < s.c; ++c) dot += self.grad[idx(c)] * y[idx(c)];
        for (int c = 0; c < s.c; ++c) (*g)[idx(c)] += self.grad[idx(c)] - y[idx(c)] * dot;
      }
  });
}

}  // namespace fcd
