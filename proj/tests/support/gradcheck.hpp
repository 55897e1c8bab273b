#pragma once

// Central finite differences against reverse-mode gradients, double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fcd/autograd.hpp"
#include "fcd/nn.hpp"

namespace fcd::testing {

struct GradCheckReport {
  int coords = 0;
  double max_rel_err = 0;
  double max_abs_err = 0;
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps coordinates with a
/// vanishing gradient from amplifying round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `loss` rebuilds the graph from the current leaf values and returns a scalar.
/// Checks `per_leaf` random coordinates of every leaf (all of them when the leaf is smaller)
/// with the five-point central stencil.
inline GradCheckReport gradcheck(const std::function<Var<double>()>& loss, std::vector<Var<double>> leaves,
                                 int per_leaf, Rng& rng, double h = 1e-4, double floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  Var<double> root = loss();
  backward(root);
  std::vector<Tensor<double>> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad());

  GradCheckReport rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double>& v = leaves[li].mutable_value();
    std::vector<std::size_t> idx;
    if (static_cast<int>(v.size()) <= per_leaf) {
      for (std::size_t i = 0; i < v.size(); ++i) idx.push_back(i);
    } else {
      for (int k = 0; k < per_leaf; ++k) idx.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(v.size()) - 1)));
    }
    for (std::size_t i : idx) {
      const double orig = v[i];
      auto at = [&](double dx) {
        v[i] = orig + dx;
        return loss().value()[0];
      };
      const double d1 = at(h) - at(-h), d2 = at(2 * h) - at(-2 * h);
      v[i] = orig;
      const double numeric = (8 * d1 - d2) / (12 * h);
      const double a = analytic[li][i];
      rep.max_rel_err = std::max(rep.max_rel_err, relative_error(a, numeric, floor));
      rep.max_abs_err = std::max(rep.max_abs_err, std::abs(a - numeric));
      ++rep.coords;
    }
  }
  return rep;
}

/// Scalar probe sum(w * y) with fixed random weights, so every output element matters.
inline Var<double> random_projection(const Var<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(y.shape());
  for (auto& x : w.vec()) x = rng.uniform(-1.0, 1.0);
  return sum(mul(y, constant(std::move(w))));
}

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  for (auto& x : t.vec()) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace fcd::testing
