// Copyright 2026 The pdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pdarts/data.hpp"
#include "pdarts/search.hpp"
#include "test_util.hpp"

using namespace pdarts;
namespace fs = std::filesystem;

namespace {

using testutil::TempDir;

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  return h;
}

SynthSpec spec(double uniformity = 0.5, std::uint64_t seed = 3) {
  SynthSpec s;
  s.num_classes = 4;
  s.height = s.width = 16;
  s.n_train = 40;
  s.n_val = 10;
  s.n_test = 10;
  s.background_uniformity = uniformity;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Synth, SameSeedIsBitIdentical) {
  const auto a = synth_generate(spec()), b = synth_generate(spec());
  EXPECT_EQ(a.train.pixels, b.train.pixels);
  EXPECT_EQ(a.train.labels, b.train.labels);
  EXPECT_EQ(a.test.pixels, b.test.pixels);
  EXPECT_NE(synth_generate(spec(0.5, 4)).train.pixels, a.train.pixels);
}

TEST(Synth, UniformBackgroundIsConstant) {
  const auto d = synth_generate(spec(1.0)).train;
  const std::uint8_t bg = to_byte(0.45);
  // With a constant background every pixel outside the blobs carries the
  // background level; blobs cover well under half of each image.
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t n = 0;
    for (std::size_t k = 0; k < d.image_size(); ++k) n += d.image(i)[k] == bg;
    EXPECT_GT(n, d.image_size() / 2) << "sample " << i;
  }
  const auto noisy = synth_generate(spec(0.0)).train;
  std::size_t n = 0;
  for (auto v : noisy.pixels) n += v == bg;
  EXPECT_LT(n, noisy.pixels.size() / 10);
}

TEST(Synth, BackgroundSpreadShrinksWithUniformity) {
  // Blob-free estimate: the spread of the corner pixel over many samples.
  auto corner_std = [](double u) {
    SynthSpec s = spec(u);
    s.height = s.width = 64;
    s.n_train = 300;
    const auto d = synth_generate(s).train;
    double m = 0, ss = 0;
    for (std::size_t i = 0; i < d.size(); ++i) m += d.image(i)[0];
    m /= d.size();
    for (std::size_t i = 0; i < d.size(); ++i) ss += (d.image(i)[0] - m) * (d.image(i)[0] - m);
    return std::sqrt(ss / d.size()) / 255.0;
  };
  const double s0 = corner_std(0.0), s5 = corner_std(0.5), s1 = corner_std(1.0);
  EXPECT_NEAR(s0, 0.2, 0.03);
  EXPECT_NEAR(s5, 0.1, 0.02);
  EXPECT_LT(s1, 0.05);
}

TEST(Synth, IdsAreUniqueAcrossSplits) {
  const auto d = synth_generate(spec());
  std::set<std::int64_t> ids;
  for (const auto* s : {&d.train, &d.val, &d.test})
    for (auto id : s->ids) EXPECT_TRUE(ids.insert(id).second);
  EXPECT_EQ(ids.size(), 60u);
}

TEST(Synth, MultiLabelTargetsAreNonEmpty) {
  auto s = spec();
  s.label_mode = LabelMode::multi_label;
  const auto d = synth_generate(s).train;
  ASSERT_EQ(d.targets.size(), d.size() * 4);
  for (std::size_t i = 0; i < d.size(); ++i) {
    float sum = 0;
    for (int k = 0; k < 4; ++k) sum += d.targets[i * 4 + k];
    EXPECT_GE(sum, 1.f);
  }
}

TEST(Synth, InvalidSpecIsAConfigError) {
  auto s = spec();
  s.n_train = 0;
  EXPECT_THROW(synth_generate(s), ConfigError);
  s = spec(1.5);
  EXPECT_THROW(synth_generate(s), ConfigError);
  s = spec();
  s.num_classes = 0;
  EXPECT_THROW(synth_generate(s), ConfigError);
}

TEST(SearchSplit, HalvesTrainWithoutOverlap) {
  const auto d = synth_generate(spec()).train;
  const auto [a, b] = search_split(d);
  EXPECT_EQ(a.size() + b.size(), d.size());
  EXPECT_EQ(a.size(), d.size() / 2);
  std::set<std::int64_t> ids(a.ids.begin(), a.ids.end());
  for (auto id : b.ids) EXPECT_FALSE(ids.count(id));
}

TEST(Normalization, MatchesDirectComputation) {
  const auto d = synth_generate(spec()).train;
  const auto n = Normalization::from(d);
  const std::size_t plane = 16 * 16;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> v;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t k = 0; k < plane; ++k) v.push_back(d.image(i)[c * plane + k] / 255.0);
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    EXPECT_NEAR(n.mean[c], m, 1e-6);
    EXPECT_NEAR(n.std[c], std::sqrt(ss / v.size()), 1e-6);
  }
  Dataset flat = d;
  std::fill(flat.pixels.begin(), flat.pixels.end(), 7);
  EXPECT_EQ(Normalization::from(flat).std, std::vector<float>(3, 1.f));
}

TEST(MakeBatch, AppliesNormalization) {
  const auto d = synth_generate(spec()).train;
  const auto n = Normalization::from(d);
  Rng rng(0);
  const auto b = make_batch<double>(d, {3, 5}, n, AugmentPolicy{}, rng);
  EXPECT_EQ(b.images.shape(), (Shape{2, 3, 16, 16}));
  EXPECT_EQ(b.labels, (std::vector<int>{d.labels[3], d.labels[5]}));
  const std::size_t sz = d.image_size(), plane = 256;
  for (std::size_t k = 0; k < sz; ++k) {
    const int c = static_cast<int>(k / plane);
    EXPECT_NEAR(b.images.values()[sz + k], (d.image(5)[k] / 255.f - n.mean[c]) / n.std[c], 1e-6);
  }
}

TEST(Resize, OutputMatchesConfiguredResolution) {
  const auto d = synth_generate(spec()).train;
  const auto r = resized(d, 8, 12);
  EXPECT_EQ(r.height, 8);
  EXPECT_EQ(r.width, 12);
  EXPECT_EQ(r.pixels.size(), d.size() * 3 * 8 * 12);
  EXPECT_EQ(r.labels, d.labels);
  std::vector<float> flat(3 * 5 * 7, 0.25f);
  for (float v : resize_bilinear(flat.data(), 3, 5, 7, 11, 3)) EXPECT_FLOAT_EQ(v, 0.25f);
}

// ---------------------------------------------------------------------------

TEST(Augment, IdentityLeavesBatchUnchanged) {
  auto img = testutil::randn(2 * 3 * 8 * 8, 1);
  std::vector<float> x(img.begin(), img.end()), y = x;
  Rng rng(0);
  augment(y, 2, 3, 8, 8, AugmentPolicy{}, rng);
  EXPECT_EQ(x, y);
}

TEST(Augment, FlipsAreInvolutions) {
  auto img = testutil::randn(3 * 5 * 6, 2);
  std::vector<float> x(img.begin(), img.end()), y = x;
  hflip(y.data(), 3, 5, 6);
  EXPECT_NE(x, y);
  hflip(y.data(), 3, 5, 6);
  EXPECT_EQ(x, y);
  vflip(y.data(), 3, 5, 6);
  vflip(y.data(), 3, 5, 6);
  EXPECT_EQ(x, y);
}

TEST(Augment, ShapePreservingAndSeedDeterministic) {
  for (auto kind : {AugmentKind::crop_flip, AugmentKind::flip_affine}) {
    auto img = testutil::randn(4 * 3 * 12 * 12, 3);
    std::vector<float> a(img.begin(), img.end()), b = a;
    Rng r1(9), r2(9);
    AugmentPolicy p{kind};
    augment(a, 4, 3, 12, 12, p, r1);
    augment(b, 4, 3, 12, 12, p, r2);
    EXPECT_EQ(a.size(), img.size());
    EXPECT_EQ(a, b);
  }
  std::vector<float> bad(10);
  Rng r(0);
  EXPECT_THROW(augment(bad, 1, 3, 4, 4, AugmentPolicy{AugmentKind::crop_flip}, r), ShapeError);
}

TEST(Augment, CropFlipRetainedMassMatchesClosedForm) {
  // A constant image keeps (H - |dy|)(W - |dx|) pixels under a shift drawn
  // uniformly from [-p, p]^2; the flip does not change the count.
  const int H = 10, W = 10, p = 4, trials = 20000;
  Rng rng(5);
  double kept = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<float> img(H * W, 1.f);
    augment_image(img.data(), 1, H, W, AugmentPolicy{AugmentKind::crop_flip, p}, rng);
    for (float v : img) kept += v;
  }
  double expect = 0;
  for (int dy = -p; dy <= p; ++dy)
    for (int dx = -p; dx <= p; ++dx) expect += (H - std::abs(dy)) * (W - std::abs(dx));
  expect /= (2 * p + 1) * (2 * p + 1);
  EXPECT_NEAR(kept / trials, expect, 0.5);
}

TEST(Augment, AffineTranslationMovesContent) {
  std::vector<float> img(9 * 9, 0.f);
  img[4 * 9 + 4] = 1.f;
  affine(img.data(), 1, 9, 9, 0.0, 2.0, -1.0);
  EXPECT_FLOAT_EQ(img[6 * 9 + 3], 1.f);
  float s = 0;
  for (float v : img) s += v;
  EXPECT_FLOAT_EQ(s, 1.f);
}

TEST(Augment, CutoutZeroesClippedSquare) {
  const int C = 2, H = 10, W = 12;
  for (auto [cy, cx, len, want] : std::vector<std::array<int, 4>>{
           {5, 6, 4, 16}, {0, 0, 4, 4}, {9, 11, 5, 9}, {5, 6, 1, 1}, {2, 3, 20, H * W}}) {
    std::vector<float> img(C * H * W, 1.f);
    cutout(img.data(), C, H, W, len, cy, cx);
    EXPECT_EQ(img.size(), static_cast<std::size_t>(C * H * W));
    int zeros = 0;
    for (float v : img) zeros += v == 0.f;
    EXPECT_EQ(zeros, C * want) << cy << "," << cx << " len " << len;
  }
}

TEST(Augment, LabelsSurviveAugmentedBatches) {
  const auto d = synth_generate(spec()).train;
  Rng rng(1);
  AugmentPolicy p{AugmentKind::flip_affine};
  p.cutout_length = 8;
  const auto b = make_batch<float>(d, {0, 1, 2, 3}, Normalization::from(d), p, rng);
  EXPECT_EQ(b.labels, (std::vector<int>{d.labels[0], d.labels[1], d.labels[2], d.labels[3]}));
  EXPECT_EQ(b.images.shape(), (Shape{4, 3, 16, 16}));
}

TEST(Augment, KindNamesRoundTrip) {
  for (auto k : {AugmentKind::identity, AugmentKind::crop_flip, AugmentKind::flip_affine})
    EXPECT_EQ(parse_augment_kind(augment_kind_name(k)), k);
  EXPECT_THROW(parse_augment_kind("rotate"), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(BatchSampler, PartitionsAndDropsSingletonTail) {
  const BatchSampler s(21, 4, 7);
  const auto e0 = s.epoch(0);
  std::set<std::size_t> seen;
  for (const auto& b : e0) {
    EXPECT_GE(b.size(), 2u);
    for (auto i : b) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(seen.size(), 20u);
  EXPECT_EQ(s.epoch(0), e0);
  EXPECT_NE(s.epoch(1), e0);
  const BatchSampler ordered(6, 4, 0, false);
  EXPECT_EQ(ordered.epoch(3), (std::vector<std::vector<std::size_t>>{{0, 1, 2, 3}, {4, 5}}));
}

// ---------------------------------------------------------------------------

namespace {

void write_cifar(const fs::path& file, int n, int label_bytes, std::uint64_t seed) {
  Rng rng(seed);
  std::ofstream os(file, std::ios::binary);
  for (int i = 0; i < n; ++i) {
    if (label_bytes == 2) os.put(static_cast<char>(rng.below(20)));
    os.put(static_cast<char>(rng.below(label_bytes == 2 ? 100 : 10)));
    for (int k = 0; k < 3072; ++k) os.put(static_cast<char>(rng.below(256)));
  }
}

}  // namespace

TEST(Cifar, LoadsTenClassLayout) {
  TempDir t("cifar10");
  for (int i = 1; i <= 5; ++i) write_cifar(t.path / ("data_batch_" + std::to_string(i) + ".bin"), 6, 1, i);
  write_cifar(t.path / "test_batch.bin", 4, 1, 9);
  const auto d = load_cifar_format(t.path);
  EXPECT_EQ(d.train.size(), 30u);
  EXPECT_EQ(d.test.size(), 4u);
  EXPECT_EQ(d.train.num_classes, 10);
  EXPECT_EQ(d.train.height, 32);
  // Independent decode of the first record.
  std::ifstream is(t.path / "data_batch_1.bin", std::ios::binary);
  std::vector<std::uint8_t> rec(3073);
  is.read(reinterpret_cast<char*>(rec.data()), 3073);
  EXPECT_EQ(d.train.labels[0], rec[0]);
  EXPECT_EQ(fnv1a(d.train.image(0), 3072), fnv1a(rec.data() + 1, 3072));
  EXPECT_EQ(fnv1a(load_cifar_format(t.path).train.image(0), 3072), fnv1a(d.train.image(0), 3072));
  std::set<std::int64_t> ids(d.train.ids.begin(), d.train.ids.end());
  for (auto id : d.test.ids) EXPECT_FALSE(ids.count(id));
}

TEST(Cifar, LoadsHundredClassLayoutWithFineLabels) {
  TempDir t("cifar100");
  write_cifar(t.path / "train.bin", 5, 2, 1);
  write_cifar(t.path / "test.bin", 3, 2, 2);
  const auto d = load_cifar_format(t.path);
  EXPECT_EQ(d.train.num_classes, 100);
  std::ifstream is(t.path / "train.bin", std::ios::binary);
  std::vector<std::uint8_t> rec(3074);
  is.read(reinterpret_cast<char*>(rec.data()), 3074);
  EXPECT_EQ(d.train.labels[0], rec[1]);
}

TEST(Cifar, MissingOrCorruptFilesNameTheFile) {
  TempDir t("cifar_bad");
  for (int i = 1; i <= 4; ++i) write_cifar(t.path / ("data_batch_" + std::to_string(i) + ".bin"), 2, 1, i);
  write_cifar(t.path / "test_batch.bin", 2, 1, 9);
  try {
    load_cifar_format(t.path);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("data_batch_5.bin"), std::string::npos);
  }
  {
    std::ofstream os(t.path / "data_batch_5.bin", std::ios::binary);
    os << "short";
  }
  try {
    load_cifar_format(t.path);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("data_batch_5.bin"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------

namespace {

RgbImage solid(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img{w, h, {}};
  for (int i = 0; i < h * w; ++i) img.pixels.insert(img.pixels.end(), {r, g, b});
  return img;
}

}  // namespace

TEST(ImageIo, PngAndPpmRoundTrip) {
  TempDir t("imgio");
  RgbImage img{5, 3, {}};
  Rng rng(1);
  for (int i = 0; i < 45; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
  write_png(t.path / "a.png", img);
  write_ppm(t.path / "a.ppm", img);
  for (const auto* f : {"a.png", "a.ppm"}) {
    const auto r = read_image(t.path / f);
    EXPECT_EQ(r.width, 5);
    EXPECT_EQ(r.height, 3);
    EXPECT_EQ(r.pixels, img.pixels);
  }
}

TEST(Patches, MultiLabelManifestWith33Columns) {
  TempDir t("patch33");
  const int K = 33, N = 12;
  Rng rng(4);
  std::ofstream m(t.path / "labels.csv");
  m << "filename";
  for (int k = 0; k < K; ++k) m << ",class_" << k;
  m << "\n";
  std::vector<int> row_sums;
  for (int i = 0; i < N; ++i) {
    const std::string f = "p" + std::to_string(i) + ".png";
    write_png(t.path / f, solid(6, 6, static_cast<std::uint8_t>(i * 10), 50, 200));
    m << f;
    int s = 0;
    for (int k = 0; k < K; ++k) {
      const int v = rng.bernoulli(0.2) ? 1 : 0;
      s += v;
      m << "," << v;
    }
    row_sums.push_back(s);
    m << "\n";
  }
  m.close();
  PatchSpec ps;
  ps.height = ps.width = 4;
  const auto d = load_patch_dataset(t.path, ps);
  EXPECT_EQ(d.train.num_classes, 33);
  EXPECT_EQ(d.train.label_mode, LabelMode::multi_label);
  EXPECT_EQ(d.train.size(), static_cast<std::size_t>(N));
  EXPECT_EQ(d.train.height, 4);
  for (int i = 0; i < N; ++i) {
    float s = 0;
    for (int k = 0; k < K; ++k) s += d.train.targets[i * K + k];
    EXPECT_EQ(static_cast<int>(s), row_sums[i]);
    EXPECT_EQ(d.train.image(i)[0], i * 10);
  }
}

TEST(Patches, SingleLabelWithSplitColumn) {
  TempDir t("patch_split");
  std::ofstream m(t.path / "labels.csv");
  m << "filename,label,split\n";
  const char* splits[] = {"train", "train", "val", "test", "train"};
  for (int i = 0; i < 5; ++i) {
    const std::string f = "q" + std::to_string(i) + ".ppm";
    write_ppm(t.path / f, solid(4, 4, 1, 2, 3));
    m << f << "," << i % 3 << "," << splits[i] << "\n";
  }
  m.close();
  const auto d = load_patch_dataset(t.path, PatchSpec{});
  EXPECT_EQ(d.train.size(), 3u);
  EXPECT_EQ(d.val.size(), 1u);
  EXPECT_EQ(d.test.size(), 1u);
  EXPECT_EQ(d.train.num_classes, 3);
  EXPECT_EQ(d.train.labels, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(d.test.labels, (std::vector<int>{0}));
}

TEST(Patches, MismatchesAreListed) {
  TempDir t("patch_bad");
  EXPECT_THROW(load_patch_dataset(t.path, PatchSpec{}), ValidationError);
  write_png(t.path / "a.png", solid(4, 4, 0, 0, 0));
  write_png(t.path / "stray.png", solid(4, 4, 0, 0, 0));
  std::ofstream m(t.path / "labels.csv");
  m << "filename,label\na.png,0\nmissing.png,1\n";
  m.close();
  try {
    load_patch_dataset(t.path, PatchSpec{});
    FAIL();
  } catch (const ValidationError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("missing.png"), std::string::npos);
    EXPECT_NE(w.find("stray.png"), std::string::npos);
  }
}

TEST(Synth, SmallSetIsLearnableByTwoCellSupernet) {
  // Difficulty calibration: 100 samples, 4 classes, 20 epochs.
  SynthSpec s;
  s.n_train = 100;
  const auto d = synth_generate(s);
  const auto [train, val] = search_split(d.train);
  SearchConfig c;
  c.epochs = 20;
  c.batch_size = 32;
  c.init_channels = 4;
  c.cells = 2;
  c.nodes = 2;
  SupernetSpec macro;
  macro.num_classes = 4;
  const auto res = run_search<float>(c, macro, train, val, Normalization::from(train), AugmentPolicy{}, 0);
  EXPECT_GT(res.history.back().metrics.val_acc, 80.0);
}
