#include <gtest/gtest.h>

#include <cmath>

#include "fcd/decoder.hpp"
#include "support/gradcheck.hpp"

using namespace fcd;
using fcd::testing::gradcheck;
using fcd::testing::random_projection;
using fcd::testing::random_tensor;

namespace {

FeatureMap<double> fmap(Tensor<double> t, int scale = 4) { return {constant(std::move(t)), scale}; }

FGDABlockConfig block_cfg(int in = 4, int out = 6) {
  FGDABlockConfig c;
  c.in_channels = in;
  c.out_channels = out;
  return c;
}

FeaturePyramidPair<double> random_pyramid(const std::array<int, 4>& ch, int base, Rng& rng, bool identical = false) {
  FeaturePyramidPair<double> fp;
  for (int i = 0; i < 4; ++i) {
    const int s = base >> i;
    fp.t1[i] = fmap(random_tensor({1, ch[i], s, s}, rng), kStageStrides[i]);
    fp.t2[i] = identical ? fp.t1[i] : fmap(random_tensor({1, ch[i], s, s}, rng), kStageStrides[i]);
  }
  return fp;
}

void saturate(Var<double>& bias, double v) { bias.mutable_value().fill(v); }

}  // namespace

TEST(Pda, ScalarExample) {
  auto out = pda(fmap(Tensor<double>(Shape{1, 1, 1, 1}, 2.0)), fmap(Tensor<double>(Shape{1, 1, 1, 1}, 5.0)));
  ASSERT_EQ(out.channels(), 2);
  EXPECT_EQ(out.data.value()[0], 3.0);
  EXPECT_EQ(out.data.value()[1], 5.0);
}

TEST(Pda, IdenticalInputsGiveZeroDifference) {
  Rng rng(1);
  auto x = fmap(random_tensor({2, 3, 4, 5}, rng));
  const auto p = pda(x, x).data.value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int w = 0; w < 5; ++w) {
          EXPECT_EQ(p.at(n, c, y, w), 0.0);
          EXPECT_EQ(p.at(n, c + 3, y, w), x.data.value().at(n, c, y, w));
        }
}

TEST(Pda, Symmetric) {
  Rng rng(2);
  auto a = fmap(random_tensor({1, 4, 6, 6}, rng)), b = fmap(random_tensor({1, 4, 6, 6}, rng));
  EXPECT_EQ(pda(a, b).data.value().vec(), pda(b, a).data.value().vec());
  EXPECT_THROW(pda(a, fmap(random_tensor({1, 4, 6, 5}, rng))), std::invalid_argument);
}

TEST(Msde, ZeroAndShape) {
  ParamStore<double> ps(3);
  Msde<double> m(ps, "m", block_cfg());
  EXPECT_EQ(m(constant(Tensor<double>(Shape{1, 8, 5, 3}))).value().vec(), std::vector<double>(6 * 15, 0.0));
  for (auto [h, w] : {std::pair{1, 1}, std::pair{2, 9}, std::pair{7, 4}}) {
    const auto y = m(constant(Tensor<double>(Shape{1, 8, h, w}, 1.0)));
    EXPECT_EQ(y.shape(), (Shape{1, 6, h, w}));
  }
}

TEST(Msde, DilatedBranchCoversFiveByFive) {
  ParamStore<double> ps(4);
  Msde<double> m(ps, "m", block_cfg());
  m.dilated.weight.mutable_value().fill(1.0);
  Tensor<double> t(Shape{1, 8, 11, 11});
  for (int c = 0; c < 8; ++c) t.at(0, c, 5, 5) = 1.0;
  const auto y = m.dilated(constant(t)).value();
  int ymin = 99, ymax = -1, xmin = 99, xmax = -1;
  for (int yy = 0; yy < 11; ++yy)
    for (int xx = 0; xx < 11; ++xx)
      if (y.at(0, 0, yy, xx) != 0.0) {
        ymin = std::min(ymin, yy), ymax = std::max(ymax, yy);
        xmin = std::min(xmin, xx), xmax = std::max(xmax, xx);
      }
  EXPECT_EQ(ymax - ymin + 1, 5);
  EXPECT_EQ(xmax - xmin + 1, 5);
  m.local.weight.mutable_value().fill(1.0);
  const auto yl = m.local(constant(t)).value();
  EXPECT_EQ(yl.at(0, 0, 3, 3), 0.0);
  EXPECT_NE(yl.at(0, 0, 4, 4), 0.0);
}

TEST(Dpse, ZeroInputZeroOutput) {
  ParamStore<double> ps(5);
  Dpse<double> d(ps, "d", 6, 4);
  const auto out = d(constant(Tensor<double>(Shape{1, 6, 4, 4})));
  for (double v : out.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(Dpse, AttentionInOpenUnitInterval) {
  ParamStore<double> ps(6);
  Dpse<double> d(ps, "d", 6, 4);
  Rng rng(7);
  auto m = constant(random_tensor({2, 6, 5, 5}, rng, -3, 3));
  for (const auto& g : {d.se.gate(m), d.cbam.attention(m)}) {
    const auto& v = g.value().vec();
    EXPECT_GT(*std::min_element(v.begin(), v.end()), 0.0);
    EXPECT_LT(*std::max_element(v.begin(), v.end()), 1.0);
  }
}

TEST(Dpse, SaturatedGatesReduceToProjection) {
  ParamStore<double> ps(8);
  Dpse<double> d(ps, "d", 6, 4);
  saturate(d.se.fc2.bias, 60.0);
  saturate(d.cbam.mlp2.bias, 60.0);
  saturate(d.cbam.spatial.bias, 60.0);
  Rng rng(9);
  auto m = constant(random_tensor({1, 6, 4, 4}, rng, -0.1, 0.1));
  const auto y = d(m).value(), ref = d.proj(m).value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Drsa, ChannelsZeroAndAlignment) {
  ParamStore<double> ps(10);
  Drsa<double> d(ps, "d", 6, 4, 5, 4);
  auto r = constant(Tensor<double>(Shape{1, 6, 3, 3}));
  auto ia = constant(Tensor<double>(Shape{1, 4, 3, 3}));
  const auto y = d(r, ia, ia);
  EXPECT_EQ(y.shape().c, 5);
  for (double v : y.value().vec()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(d(r, ia, constant(Tensor<double>(Shape{1, 4, 3, 2}))), std::invalid_argument);
}

TEST(FgdaBlock, DisabledDrsaIsOneByOneProjection) {
  auto cfg = block_cfg();
  cfg.enable_drsa = false;
  ParamStore<double> ps(11);
  FgdaBlock<double> blk(ps, "b", cfg, 2);
  ASSERT_NE(ps.find("b.drsa_skip.weight"), nullptr);
  EXPECT_EQ(ps.find("b.drsa.compress.weight"), nullptr);
  EXPECT_EQ(ps.find("b.drsa_skip.weight")->shape(), (Shape{6, 6, 1, 1}));
  Rng rng(12);
  auto r = constant(random_tensor({1, 6, 3, 3}, rng));
  auto junk = constant(random_tensor({1, 4, 3, 3}, rng));
  const auto y = blk.drsa(r, junk, junk).value();
  const auto ref = conv2d(r, *ps.find("b.drsa_skip.weight"), *ps.find("b.drsa_skip.bias"), ConvGeometry{}).value();
  EXPECT_EQ(y.vec(), ref.vec());
}

TEST(ConvMamba, ShapeZeroAndGradients) {
  ParamStore<double> ps(13);
  ConvMamba<double> cm(ps, "cm", 4, 2);
  for (auto s : {Shape{1, 4, 1, 1}, Shape{2, 4, 5, 3}}) {
    EXPECT_EQ(cm(constant(Tensor<double>(s, 0.2))).shape(), s);
    const auto out = cm(constant(Tensor<double>(s)));
    for (double v : out.value().vec()) EXPECT_EQ(v, 0.0);
  }
  Rng rng(14);
  Var<double> x(random_tensor({1, 4, 8, 8}, rng), true);
  std::vector<Var<double>> leaves{x};
  for (auto& p : ps.params()) leaves.push_back(p.var);
  const auto rep = gradcheck([&] { return random_projection(cm(x), 5); }, leaves, 16, rng);
  EXPECT_LT(rep.max_rel_err, 1e-4);
}

TEST(Decoder, IdenticalPyramidZeroesEveryDifference) {
  const std::array<int, 4> ch = {4, 8, 12, 16};
  ParamStore<double> ps(15);
  FgdaDecoder<double> dec(ps, make_fgda_configs(ch, {4, 4, 4, 4}), 6, 2);
  Rng rng(16);
  const auto fp = random_pyramid(ch, 16, rng, true);
  std::array<Var<double>, 4> anchors;
  dec.decode_features(fp, &anchors);
  for (int i = 0; i < 4; ++i) {
    const auto& v = anchors[i].value();
    const Shape s = v.shape();
    for (int c = 0; c < s.c / 2; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) ASSERT_EQ(v.at(0, c, y, x), 0.0);
  }
}

TEST(Decoder, SwappedPyramidGivesSameAnchors) {
  const std::array<int, 4> ch = {4, 8, 12, 16};
  ParamStore<double> ps(17);
  FgdaDecoder<double> dec(ps, make_fgda_configs(ch, {4, 4, 4, 4}), 6, 2);
  Rng rng(18);
  auto fp = random_pyramid(ch, 16, rng);
  auto swapped = fp;
  std::swap(swapped.t1, swapped.t2);
  std::array<Var<double>, 4> a, b;
  dec.decode_features(fp, &a);
  dec.decode_features(swapped, &b);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a[i].value().vec(), b[i].value().vec());
}

TEST(Decoder, LogitShapeAt256) {
  ParamStore<float> ps(19);
  const std::array<int, 4> ch = {32, 64, 128, 256};
  FgdaDecoder<float> dec(ps, make_fgda_configs(ch, {32, 32, 32, 32}), 6, 4);
  FeaturePyramidPair<float> fp;
  for (int i = 0; i < 4; ++i) {
    const int s = 64 >> i;
    fp.t1[i] = {constant(Tensor<float>(Shape{1, ch[i], s, s}, 0.1f)), kStageStrides[i]};
    fp.t2[i] = {constant(Tensor<float>(Shape{1, ch[i], s, s}, 0.2f)), kStageStrides[i]};
  }
  const auto out = dec.decode(fp);
  EXPECT_EQ(out.logits.shape(), (Shape{1, 6, 256, 256}));
  EXPECT_EQ(out.z.data.shape(), (Shape{1, 32, 64, 64}));
}

TEST(Decoder, ThreeStagePyramidThrows) {
  const std::array<int, 4> ch = {4, 8, 12, 16};
  ParamStore<double> ps(20);
  FgdaDecoder<double> dec(ps, make_fgda_configs(ch, {4, 4, 4, 4}), 6, 2);
  std::vector<FeatureMap<double>> three(3, fmap(Tensor<double>(Shape{1, 4, 4, 4})));
  EXPECT_THROW(decode(dec, three, three), std::invalid_argument);
  Rng rng(21);
  auto fp = random_pyramid({4, 8, 12, 20}, 16, rng);
  EXPECT_THROW(dec.decode(fp), std::invalid_argument);
}

TEST(Decoder, FullRowEnablesAllSwitches) {
  const auto cfgs = make_fgda_configs({4, 8, 12, 16}, {4, 4, 4, 4});
  for (const auto& c : cfgs) EXPECT_TRUE(c.enable_msde && c.enable_dpse && c.enable_drsa);
}

TEST(Decoder, DisablingSwitchesNeverAddsParameters) {
  const std::array<int, 4> ch = {8, 16, 24, 32};
  auto count = [&](bool msde, bool dpse, bool drsa) {
    ParamStore<float> ps(0);
    FgdaDecoder<float> dec(ps, make_fgda_configs(ch, {8, 8, 8, 8}, msde, dpse, drsa), 6, 2);
    return ps.count();
  };
  const auto full = count(true, true, true);
  EXPECT_LT(count(false, true, true), full);
  EXPECT_LT(count(true, false, true), full);
  EXPECT_LT(count(true, true, false), full);
  EXPECT_LE(count(false, false, false), count(false, true, true));
  EXPECT_LE(count(false, false, false), count(true, false, true));
  EXPECT_LE(count(false, false, false), count(true, true, false));
}

TEST(Decoder, GroupsMustDivideChannels) {
  auto cfg = block_cfg(6, 4);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Decoder, EndToEndGradients) {
  const std::array<int, 4> ch = {4, 8, 12, 16};
  ParamStore<double> ps(22);
  FgdaDecoder<double> dec(ps, make_fgda_configs(ch, {4, 4, 4, 4}), 3, 1);
  Rng rng(23);
  auto fp = random_pyramid(ch, 8, rng);
  std::vector<Var<double>> leaves;
  for (int i = 0; i < 4; ++i) {
    fp.t1[i].data = Var<double>(fp.t1[i].data.value(), true);
    leaves.push_back(fp.t1[i].data);
  }
  for (auto& p : ps.params()) leaves.push_back(p.var);
  const auto rep = gradcheck([&] { return random_projection(dec.decode(fp).logits, 9); }, leaves, 2, rng);
  EXPECT_LT(rep.max_rel_err, 1e-4);
  EXPECT_GT(rep.coords, 150);
}
