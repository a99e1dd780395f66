#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mrunet/data.hpp"

using namespace mrunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

std::string pgm(std::size_t w, std::size_t h, const std::vector<unsigned char>& px, const std::string& comment = "") {
  std::string s = "P5\n" + comment + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  s.append(px.begin(), px.end());
  return s;
}

void check_split(const FoldSplit& s, std::size_t n, std::size_t k) {
  ASSERT_EQ(s.k(), k);
  std::vector<int> seen(n, 0);
  std::size_t lo = n, hi = 0;
  for (const auto& f : s.folds) {
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
    for (auto i : f) {
      ASSERT_LT(i, n);
      ++seen[i];
    }
  }
  for (int c : seen) ASSERT_EQ(c, 1);
  ASSERT_LE(hi - lo, 1u);
}

}  // namespace

// ---------------------------------------------------------------- netpbm / load

TEST(LoadSample, PgmScalingAndMaskThreshold) {
  TempDir dir("mrunet_load_sample");
  write_bytes(dir.path / "img.pgm", pgm(2, 2, {255, 0, 51, 128}, "# a comment\n"));
  write_bytes(dir.path / "mask.pgm", pgm(2, 2, {200, 10, 128, 127}));
  const Sample s = load_sample((dir.path / "img.pgm").string(), (dir.path / "mask.pgm").string());
  EXPECT_EQ(s.id, "img");
  EXPECT_EQ(s.image.shape(), (Shape{2, 2, 1}));
  EXPECT_EQ(s.image[0], 1.0f);
  EXPECT_EQ(s.image[1], 0.0f);
  EXPECT_FLOAT_EQ(s.image[2], 0.2f);
  EXPECT_EQ(s.mask.bits(), (std::vector<std::uint8_t>{1, 0, 1, 0}));
}

TEST(LoadSample, PpmHasThreeChannels) {
  TempDir dir("mrunet_load_ppm");
  std::string ppm = "P6\n1 2\n255\n";
  ppm += std::string("\xff\x00\x80\x00\xff\x00", 6);
  write_bytes(dir.path / "c.ppm", ppm);
  write_bytes(dir.path / "m.pgm", pgm(1, 2, {0, 255}));
  const Sample s = load_sample((dir.path / "c.ppm").string(), (dir.path / "m.pgm").string());
  EXPECT_EQ(s.image.shape(), (Shape{2, 1, 3}));
  EXPECT_EQ(s.image[0], 1.0f);
  EXPECT_EQ(s.image[4], 1.0f);
}

TEST(LoadSample, MalformedHeader) {
  TempDir dir("mrunet_load_bad");
  write_bytes(dir.path / "a.pgm", "P2\n2 2\n255\n0 0 0 0\n");
  write_bytes(dir.path / "b.pgm", "P5\n2 2\n65535\n");
  write_bytes(dir.path / "c.pgm", "P5\n2 2\n255\n\x01");
  write_bytes(dir.path / "m.pgm", pgm(2, 2, {0, 0, 0, 0}));
  for (auto f : {"a.pgm", "b.pgm", "c.pgm"})
    EXPECT_THROW(load_sample((dir.path / f).string(), (dir.path / "m.pgm").string()), format_error) << f;
}

TEST(LoadSample, ExtentMismatchIsPairingError) {
  TempDir dir("mrunet_load_pair");
  write_bytes(dir.path / "i.pgm", pgm(2, 2, {0, 0, 0, 0}));
  write_bytes(dir.path / "m.pgm", pgm(1, 4, {0, 0, 0, 0}));
  EXPECT_THROW(load_sample((dir.path / "i.pgm").string(), (dir.path / "m.pgm").string()), pairing_error);
}

TEST(LoadSample, TnsrImage) {
  TempDir dir("mrunet_load_tnsr");
  save_tnsr((dir.path / "t.tnsr").string(), Tensor<float>(Shape{2, 2, 4}, 0.25f));
  write_bytes(dir.path / "m.pgm", pgm(2, 2, {0, 255, 0, 0}));
  const Sample s = load_sample((dir.path / "t.tnsr").string(), (dir.path / "m.pgm").string());
  EXPECT_EQ(s.image.shape(), (Shape{2, 2, 4}));
  EXPECT_EQ(s.image[5], 0.25f);
}

TEST(LoadDataset, SortedIdsAndErrors) {
  TempDir dir("mrunet_load_dataset");
  fs::create_directories(dir.path / "images");
  fs::create_directories(dir.path / "masks");
  for (auto id : {"b", "a", "c"}) {
    write_bytes(dir.path / "images" / (std::string(id) + ".pgm"), pgm(2, 2, {1, 2, 3, 4}));
    write_bytes(dir.path / "masks" / (std::string(id) + ".pgm"), pgm(2, 2, {0, 255, 0, 255}));
  }
  const Dataset d = load_dataset(dir.path.string());
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.samples[0].id, "a");
  EXPECT_EQ(d.samples[2].id, "c");

  write_bytes(dir.path / "images" / "d.pgm", pgm(2, 2, {1, 2, 3, 4}));
  EXPECT_THROW(load_dataset(dir.path.string()), pairing_error);
  EXPECT_THROW(load_dataset((dir.path / "missing").string()), io_error);
}

TEST(SaveDataset, RoundTrip) {
  TempDir dir("mrunet_save_dataset");
  const auto synth = synth_generate({6, 16, 32, 3, Challenge::clean, 4});
  save_dataset(synth.dataset, dir.path.string());
  const Dataset back = load_dataset(dir.path.string());
  ASSERT_EQ(back.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(back.samples[i].id, synth.dataset.samples[i].id);
    EXPECT_EQ(back.samples[i].mask, synth.dataset.samples[i].mask);
    for (std::size_t k = 0; k < back.samples[i].image.size(); ++k)
      EXPECT_NEAR(back.samples[i].image[k], synth.dataset.samples[i].image[k], 0.5 / 255 + 1e-6);
  }
}

// ---------------------------------------------------------------- resize

TEST(Resize, IdentityIsBitwiseEqual) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> t(Shape{5, 7, 3});
  for (auto& v : t.values()) v = u(rng);
  EXPECT_EQ(resize(t, 5, 7), t);
}

TEST(Resize, ConstantStaysConstant) {
  const auto r = resize(Tensor<float>(Shape{2, 2, 2}, 0.375f), 4, 4);
  EXPECT_EQ(r.shape(), (Shape{4, 4, 2}));
  for (float v : r.values()) EXPECT_FLOAT_EQ(v, 0.375f);
}

TEST(Resize, BilinearHalfPixelCenters) {
  Tensor<float> t(Shape{1, 2, 1}, std::vector<float>{0.0f, 1.0f});
  const auto r = resize(t, 1, 4);
  EXPECT_FLOAT_EQ(r[0], 0.0f);
  EXPECT_FLOAT_EQ(r[1], 0.25f);
  EXPECT_FLOAT_EQ(r[2], 0.75f);
  EXPECT_FLOAT_EQ(r[3], 1.0f);
}

TEST(Resize, MasksStayBinary) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> ext(1, 40);
  std::bernoulli_distribution b(0.5);
  for (int i = 0; i < 200; ++i) {
    const std::size_t h = ext(rng), w = ext(rng);
    std::vector<std::uint8_t> bits(h * w);
    for (auto& v : bits) v = b(rng);
    const auto r = resize(BinaryMask(Shape{h, w, 1}, bits), ext(rng), ext(rng));
    for (auto v : r.bits()) ASSERT_LE(v, 1);
  }
}

// ---------------------------------------------------------------- k-fold

TEST(KFold, EvenSplit) {
  const auto s = kfold_split(10, 5, 0);
  for (const auto& f : s.folds) EXPECT_EQ(f.size(), 2u);
  check_split(s, 10, 5);
}

TEST(KFold, NearEqualSizes) {
  const auto s = kfold_split(11, 5, 1);
  std::vector<std::size_t> sizes;
  for (const auto& f : s.folds) sizes.push_back(f.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2, 2, 2}));
}

TEST(KFold, Deterministic) {
  EXPECT_EQ(kfold_split(37, 5, 9).folds, kfold_split(37, 5, 9).folds);
  EXPECT_NE(kfold_split(37, 5, 9).folds, kfold_split(37, 5, 10).folds);
}

TEST(KFold, Errors) {
  EXPECT_THROW(kfold_split(4, 5, 0), invalid_split_error);
  EXPECT_THROW(kfold_split(10, 1, 0), invalid_split_error);
}

TEST(KFold, InvariantsForAllSizes) {
  std::mt19937_64 rng(3);
  for (std::size_t k : {2u, 3u, 5u, 10u})
    for (std::size_t n = k; n <= 1000; n += (n < 60 ? 1 : 37)) check_split(kfold_split(n, k, rng()), n, k);
}

TEST(KFold, TrainingIndicesComplementHeldOut) {
  const auto s = kfold_split(23, 5, 4);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto tr = s.training_indices(f);
    std::set<std::size_t> all(tr.begin(), tr.end());
    EXPECT_EQ(all.size(), tr.size());
    for (auto i : s.folds[f]) EXPECT_FALSE(all.count(i));
    EXPECT_EQ(tr.size() + s.folds[f].size(), 23u);
  }
}

// ---------------------------------------------------------------- synthetic

TEST(Synth, CleanSamples) {
  const auto s = synth_generate({4, 64, 64, 3, Challenge::clean, 7});
  ASSERT_EQ(s.dataset.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& sm = s.dataset.samples[i];
    EXPECT_NO_THROW(validate_sample(sm));
    EXPECT_EQ(sm.image.shape(), (Shape{64, 64, 3}));
    for (auto b : sm.mask.bits()) EXPECT_LE(b, 1);
    EXPECT_GE(sm.mask.coverage(), 0.05);
    EXPECT_LE(sm.mask.coverage(), 0.4);
    EXPECT_DOUBLE_EQ(s.audit[i].foreground_fraction, sm.mask.coverage());
  }
}

TEST(Synth, Deterministic) {
  const auto a = synth_generate({5, 32, 32, 1, Challenge::perturbed, 3});
  const auto b = synth_generate({5, 32, 32, 1, Challenge::perturbed, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.dataset.samples[i].image, b.dataset.samples[i].image);
    EXPECT_EQ(a.dataset.samples[i].mask, b.dataset.samples[i].mask);
    EXPECT_EQ(a.dataset.samples[i].id, b.dataset.samples[i].id);
  }
}

TEST(Synth, OutliersAreInImageButNotMask) {
  const auto s = synth_generate({20, 64, 64, 3, Challenge::outliers, 11});
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& sm = s.dataset.samples[i];
    ASSERT_FALSE(s.audit[i].distractor_pixels.empty());
    for (auto p : s.audit[i].distractor_pixels) {
      EXPECT_EQ(sm.mask[p], 0);
      EXPECT_GE(sm.image[p * 3], 0.9f);
    }
  }
}

TEST(Synth, MajorityClassCoverage) {
  const auto s = synth_generate({30, 64, 64, 3, Challenge::majority_class, 5});
  double mean = 0.0;
  for (const auto& sm : s.dataset.samples) mean += sm.mask.coverage();
  EXPECT_GT(mean / 30.0, 0.6);
}

TEST(Synth, ScaleVaryCoversWiderRange) {
  const auto base = synth_generate({60, 64, 64, 1, Challenge::clean, 2});
  const auto wide = synth_generate({60, 64, 64, 1, Challenge::scale_vary, 2});
  auto spread = [](const SynthDataset& d) {
    double lo = 1.0, hi = 0.0;
    for (const auto& a : d.audit) {
      lo = std::min(lo, a.foreground_fraction);
      hi = std::max(hi, a.foreground_fraction);
    }
    return hi - lo;
  };
  EXPECT_GT(spread(wide), spread(base));
}

TEST(Synth, FaintBoundaryHasLowerContrast) {
  auto contrast = [](const SynthDataset& d) {
    double total = 0.0;
    for (const auto& s : d.dataset.samples) {
      double fg = 0.0, bg = 0.0;
      std::size_t nf = 0, nb = 0;
      for (std::size_t p = 0; p < s.mask.size(); ++p) {
        if (s.mask[p]) {
          fg += s.image[p];
          ++nf;
        } else {
          bg += s.image[p];
          ++nb;
        }
      }
      total += fg / static_cast<double>(nf) - bg / static_cast<double>(nb);
    }
    return total / static_cast<double>(d.dataset.size());
  };
  EXPECT_LT(contrast(synth_generate({20, 32, 32, 1, Challenge::faint_boundary, 1})),
            contrast(synth_generate({20, 32, 32, 1, Challenge::clean, 1})));
}

TEST(Synth, AllChallengesProduceValidSamples) {
  for (auto c : {Challenge::clean, Challenge::scale_vary, Challenge::faint_boundary, Challenge::perturbed,
                 Challenge::outliers, Challenge::majority_class}) {
    const auto s = synth_generate({8, 32, 48, 2, c, 6});
    for (const auto& sm : s.dataset.samples) EXPECT_NO_THROW(validate_sample(sm)) << to_string(c);
  }
}

TEST(Synth, ExtentsMustBeMultiplesOf16) {
  EXPECT_THROW(synth_generate({2, 40, 32, 1, Challenge::clean, 0}), shape_error);
}

TEST(Synth, ParseChallenge) {
  EXPECT_EQ(parse_challenge("faint_boundary"), Challenge::faint_boundary);
  EXPECT_THROW(parse_challenge("blurry"), usage_error);
}
