#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "fcd/synth.hpp"
#include "support/tempdir.hpp"

using namespace fcd;
using fcd::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SynthConfig small_cfg() {
  SynthConfig c;
  c.n_samples = 6;
  c.patch_size = 64;
  c.min_region_px = 40;
  return c;
}

}  // namespace

TEST(Synth, SameSeedGivesByteIdenticalDatasets) {
  TempDir a("synth_a"), b("synth_b");
  auto cfg = small_cfg();
  cfg.n_val = 2;
  generate_synthetic(cfg, a.path());
  generate_synthetic(cfg, b.path());
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    ASSERT_TRUE(fs::exists(b.path() / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 1 + 2 * 1 + 3 * 8);  // meta, two sidecars, eight triples
}

TEST(Synth, DifferentSeedsDiffer) {
  auto c1 = small_cfg(), c2 = small_cfg();
  c2.seed = 8;
  EXPECT_NE(synthesize(c1)[0].sample.image_t1, synthesize(c2)[0].sample.image_t1);
}

TEST(Synth, ZeroPseudoRateHasNoJitter) {
  auto cfg = small_cfg();
  cfg.pseudo_change_rate = 0.0;
  cfg.n_samples = 12;
  for (const auto& s : synthesize(cfg)) {
    EXPECT_FALSE(s.jittered);
    // every changed pixel in t2 is explained by the label
    const auto& a = s.sample.image_t1;
    const auto& b = s.sample.image_t2;
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        if (s.sample.label.at(y, x) != 0) continue;
        for (int c = 0; c < 3; ++c) ASSERT_EQ(a.at(y, x, c), b.at(y, x, c));
      }
    EXPECT_TRUE(s.sample.prompt->nuisances.empty());
  }
}

TEST(Synth, FullPseudoRateJittersAll) {
  auto cfg = small_cfg();
  cfg.pseudo_change_rate = 1.0;
  for (const auto& s : synthesize(cfg)) {
    EXPECT_TRUE(s.jittered);
    ASSERT_EQ(s.sample.prompt->nuisances.size(), 1u);
    EXPECT_EQ(s.sample.prompt->nuisances[0].name, Nuisance::Illumination);
  }
}

TEST(Synth, LabelsSurviveTheFilter) {
  SynthConfig cfg;
  cfg.n_samples = 16;
  cfg.patch_size = 128;
  for (const auto& s : synthesize(cfg)) {
    EXPECT_EQ(filter_small_regions(s.sample.label, cfg.min_region_px), s.sample.label) << s.sample.id;
  }
}

TEST(Synth, SamplesValidateAndSplitsAreDisjoint) {
  TempDir dir("synth_valid");
  auto cfg = small_cfg();
  cfg.n_val = 3;
  cfg.n_test = 2;
  const auto train = generate_synthetic(cfg, dir.path());
  const auto val = load_manifest(dir.path(), Split::Val);
  const auto test = load_manifest(dir.path(), Split::Test);
  EXPECT_EQ(train.size(), 6u);
  EXPECT_EQ(val.size(), 3u);
  EXPECT_EQ(test.size(), 2u);
  EXPECT_TRUE(splits_disjoint({&train, &val, &test}));
  for (const auto* m : {&train, &val, &test}) {
    for (const auto& s : load_all(*m)) EXPECT_TRUE(validate_sample(s, m->taxonomy).empty()) << s.id;
  }
}

TEST(Synth, DiskMatchesMemory) {
  TempDir dir("synth_mem");
  auto cfg = small_cfg();
  const auto m = generate_synthetic(cfg, dir.path());
  const auto mem = synthesize(cfg);
  for (const auto& s : mem) {
    const auto disk = load_sample(m, s.sample.id);
    EXPECT_EQ(disk.image_t1, s.sample.image_t1);
    EXPECT_EQ(disk.image_t2, s.sample.image_t2);
    EXPECT_EQ(disk.label, s.sample.label);
    EXPECT_EQ(disk.prompt, s.sample.prompt);
  }
}

TEST(Synth, BcdModeCollapsesLabels) {
  auto cfg = small_cfg();
  cfg.mode = TaskMode::BCD;
  for (const auto& s : synthesize(cfg))
    for (auto v : s.sample.label.values) EXPECT_LE(v, 1);
}

TEST(Synth, EverySampleHasChange) {
  SynthConfig cfg;
  cfg.n_samples = 16;
  cfg.patch_size = 96;
  int with_change = 0;
  for (const auto& s : synthesize(cfg)) {
    for (auto v : s.sample.label.values) {
      if (v) {
        ++with_change;
        break;
      }
    }
  }
  EXPECT_GE(with_change, 14);
}

TEST(Synth, ConfigValidation) {
  SynthConfig cfg;
  cfg.patch_size = 16;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.pseudo_change_rate = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.shape_classes = {0};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
