#include <gtest/gtest.h>

#include <cmath>

#include "fcd/conv.hpp"
#include "fcd/ops.hpp"
#include "fcd/scan.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fcd;
using fcd::testing::gradcheck;
using fcd::testing::random_projection;
using fcd::testing::random_tensor;

namespace {

Var<double> leaf(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Var<double>(random_tensor(s, rng, lo, hi), true);
}

void expect_grads(const std::function<Var<double>()>& f, std::vector<Var<double>> leaves, std::uint64_t seed = 1) {
  Rng rng(seed);
  const auto rep = gradcheck(f, std::move(leaves), 40, rng);
  EXPECT_GT(rep.coords, 0);
  EXPECT_LT(rep.max_rel_err, 1e-6) << "abs " << rep.max_abs_err;
}

}  // namespace

TEST(Tensor, RejectsNonPositiveShape) {
  EXPECT_THROW(Tensor<double>(Shape{1, 0, 2, 2}), std::invalid_argument);
  EXPECT_THROW(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>(3)), std::invalid_argument);
}

TEST(Tensor, IndexIsRowMajorNchw) {
  Tensor<int> t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.index(1, 2, 3, 4), t.size() - 1);
  EXPECT_EQ(t.index(0, 1, 0, 0), 20u);
}

TEST(Autograd, BroadcastBinaryOps) {
  Rng rng(3);
  auto a = leaf({2, 3, 4, 4}, rng), b = leaf({1, 3, 1, 1}, rng), c = leaf({2, 1, 4, 4}, rng);
  expect_grads([&] { return random_projection(mul(add(a, b), sub(c, b)), 11); }, {a, b, c});
}

TEST(Autograd, PointwiseNonlinearities) {
  Rng rng(4);
  auto a = leaf({1, 4, 3, 3}, rng, -2, 2);
  expect_grads([&] { return random_projection(add(sigmoid(a), silu(scale(a, 1.7))), 5); }, {a});
}

TEST(Autograd, ConcatAndPools) {
  Rng rng(5);
  auto a = leaf({2, 3, 5, 4}, rng), b = leaf({2, 2, 5, 4}, rng);
  expect_grads(
      [&] {
        auto x = concat_channels<double>({a, b});
        return add(add(random_projection(global_avg_pool(x), 1), random_projection(global_max_pool(x), 2)),
                   add(random_projection(channel_mean(x), 3), random_projection(channel_max(x), 4)));
      },
      {a, b});
}

TEST(Autograd, BatchMeanAndSum) {
  Rng rng(6);
  auto a = leaf({3, 4, 2, 2}, rng);
  expect_grads([&] { return add(random_projection(batch_mean(a), 9), sum(mul(a, a))); }, {a});
}

TEST(Autograd, BilinearResize) {
  Rng rng(7);
  auto a = leaf({1, 2, 4, 5}, rng);
  expect_grads([&] { return random_projection(resize_bilinear(a, 9, 7), 3); }, {a});
  expect_grads([&] { return random_projection(upsample_bilinear(a, 4), 4); }, {a});
}

TEST(Ops, BilinearIdentityAtSameSize) {
  Rng rng(8);
  auto a = leaf({1, 2, 4, 5}, rng);
  auto y = resize_bilinear(a, 4, 5);
  for (std::size_t i = 0; i < a.value().size(); ++i) EXPECT_DOUBLE_EQ(y.value()[i], a.value()[i]);
}

TEST(Autograd, L2NormalizeChannels) {
  Rng rng(9);
  auto a = leaf({2, 6, 3, 2}, rng);
  expect_grads([&] { return random_projection(l2_normalize_channels(a), 2); }, {a});
  auto y = l2_normalize_channels(a).value();
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += y.at(n, c, 1, 1) * y.at(n, c, 1, 1);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autograd, RenormalizedResidualBothBranches) {
  Rng rng(10);
  auto rows = Var<double>(l2_normalize_channels(constant(random_tensor({3, 8, 1, 1}, rng))).value(), true);
  auto off = leaf({1, 8, 1, 1}, rng, -0.3, 0.3);
  expect_grads([&] { return random_projection(renormalized_residual(rows, off), 1); }, {rows, off});
  // zero offset: exact identity on values, gradient still defined
  auto zero = Var<double>(Tensor<double>(Shape{1, 8, 1, 1}), true);
  auto y = renormalized_residual(rows, zero);
  EXPECT_EQ(y.value().vec(), rows.value().vec());
  expect_grads([&] { return random_projection(renormalized_residual(rows, zero), 4); }, {zero});
}

struct ConvCase {
  int cin, cout, k, stride, pad, dil, groups, h, w;
};

class ConvTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTest, MatchesNaiveLoopAndGradients) {
  const auto p = GetParam();
  Rng rng(p.cin * 31 + p.k);
  auto x = leaf({2, p.cin, p.h, p.w}, rng);
  auto w = leaf({p.cout, p.cin / p.groups, p.k, p.k}, rng);
  auto b = leaf({p.cout, 1, 1, 1}, rng);
  const ConvGeometry geo{p.stride, p.pad, p.dil, p.groups};
  auto y = conv2d(x, w, b, geo);
  const auto ref = oracle::conv2d(x.value(), w.value(), &b.value(), p.stride, p.pad, p.dil, p.groups);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
  expect_grads([&] { return random_projection(conv2d(x, w, b, geo), 17); }, {x, w, b});
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvTest,
                         ::testing::Values(ConvCase{3, 4, 1, 1, 0, 1, 1, 5, 6}, ConvCase{4, 6, 3, 1, 1, 1, 2, 6, 5},
                                           ConvCase{4, 4, 3, 1, 2, 2, 4, 7, 7}, ConvCase{3, 5, 4, 4, 0, 1, 1, 8, 8},
                                           ConvCase{2, 3, 2, 2, 0, 1, 1, 6, 4}, ConvCase{2, 1, 7, 1, 3, 1, 1, 9, 8}));

TEST(Conv, RejectsBadGroups) {
  Rng rng(1);
  auto x = leaf({1, 3, 4, 4}, rng);
  auto w = leaf({4, 1, 3, 3}, rng);
  EXPECT_THROW(conv2d(x, w, ConvGeometry{1, 1, 1, 2}), std::invalid_argument);
}

TEST(Scan, MatchesNaiveRecurrence) {
  Rng rng(12);
  auto x = leaf({2, 3, 4, 5}, rng);
  auto d = leaf({3, 2, 1, 1}, rng, -2, 2), bi = leaf({3, 2, 1, 1}, rng), bo = leaf({3, 2, 1, 1}, rng);
  for (bool rev : {false, true}) {
    auto y = linear_scan(x, d, bi, bo, rev);
    auto ref = oracle::linear_scan(x.value(), d.value(), bi.value(), bo.value(), rev);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
    expect_grads([&] { return random_projection(linear_scan(x, d, bi, bo, rev), 21); }, {x, d, bi, bo});
  }
}

TEST(Scan, ForwardScanIsCausal) {
  Rng rng(13);
  auto x = leaf({1, 2, 3, 3}, rng);
  auto d = leaf({2, 2, 1, 1}, rng), bi = leaf({2, 2, 1, 1}, rng), bo = leaf({2, 2, 1, 1}, rng);
  auto base = linear_scan(x, d, bi, bo, false).value();
  x.mutable_value().at(0, 0, 2, 2) += 1.0;  // last position
  auto moved = linear_scan(x, d, bi, bo, false).value();
  for (int y = 0; y < 3; ++y)
    for (int xx = 0; xx < 3; ++xx) {
      if (y == 2 && xx == 2) continue;
      EXPECT_EQ(base.at(0, 0, y, xx), moved.at(0, 0, y, xx));
    }
}

TEST(Autograd, SharedLeafAccumulatesAcrossUses) {
  Var<double> a(Tensor<double>(Shape{1, 1, 1, 1}, 3.0), true);
  backward(mul(a, a));
  EXPECT_DOUBLE_EQ(a.grad()[0], 6.0);
}
