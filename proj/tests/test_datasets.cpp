#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "ganimorph/datasets.hpp"
#include "ganimorph/toy_data.hpp"
#include "test_util.hpp"

using namespace ganimorph;
using namespace ganimorph::data;

namespace {

RgbImage gradient_image(int w, int h, int seed = 0) {
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>((x * 255) / (w - 1));
      p[1] = static_cast<std::uint8_t>((y * 255) / (h - 1));
      p[2] = static_cast<std::uint8_t>((x * 7 + y * 13 + seed) % 256);
    }
  return img;
}

AugmentConfig identity_config(int size) {
  AugmentConfig c;
  c.rescale_factor = 1.0;
  c.max_rotation_deg = 0.0;
  c.flip_horizontal = false;
  c.jitter_lo = c.jitter_hi = 1.0;
  c.crop_size = size;
  return c;
}

}  // namespace

TEST(ImageFolderTest, CountsValidImages) {
  const auto dir = testing_util::scratch_dir("folder_valid");
  for (int i = 0; i < 3; ++i) write_png(dir / ("img" + std::to_string(i) + ".png"), gradient_image(16, 12, i));
  std::ofstream(dir / "notes.txt") << "not an image";
  const auto folder = load_image_folder(dir);
  EXPECT_EQ(folder.size(), 3u);
  EXPECT_TRUE(folder.warnings().empty());
  EXPECT_EQ(folder.image(1), gradient_image(16, 12, 1));
  const auto t = folder.tensor(0);
  EXPECT_EQ(t.sizes(), (std::vector<int64_t>{3, 12, 16}));
  EXPECT_GE(t.min().item<float>(), -1.0f);
  EXPECT_LE(t.max().item<float>(), 1.0f);
}

TEST(ImageFolderTest, CorruptFilesAreSkippedWithOneWarningEach) {
  const auto dir = testing_util::scratch_dir("folder_corrupt");
  write_png(dir / "a.png", gradient_image(8, 8));
  write_png(dir / "b.png", gradient_image(8, 8, 3));
  std::ofstream(dir / "c.png", std::ios::binary) << "\x89PNG garbage";
  const auto folder = load_image_folder(dir);
  EXPECT_EQ(folder.size(), 2u);
  ASSERT_EQ(folder.warnings().size(), 1u);
  EXPECT_EQ(folder.warnings()[0].file.filename(), "c.png");
}

TEST(ImageFolderTest, EmptyOrMissingDirectoryIsAnIoError) {
  const auto dir = testing_util::scratch_dir("folder_empty");
  EXPECT_THROW(load_image_folder(dir), IoError);
  EXPECT_THROW(load_image_folder(dir / "missing"), IoError);
}

TEST(ImageFolderTest, ToyDatasetDecodesToStoredPixels) {
  const auto dir = testing_util::scratch_dir("folder_toy");
  const auto records = toy::generate_dataset(100, 11, dir);
  const auto xs = load_image_folder(dir / "x");
  const auto ys = load_image_folder(dir / "y");
  EXPECT_EQ(xs.size(), 100u);
  EXPECT_EQ(ys.size(), 100u);
  EXPECT_EQ(xs.image(17), toy::render_domain_x(records[17].spec));
  EXPECT_EQ(ys.image(17), toy::render_domain_y(records[17].spec));
}

TEST(Augment, IdentityConfigIsIdentity) {
  const auto img = gradient_image(40, 40);
  const auto out = augment(img, identity_config(40), 5);
  EXPECT_TRUE(torch::equal(out, to_tensor(img)));
}

TEST(Augment, SameSeedSameOutput) {
  const auto img = gradient_image(64, 64);
  AugmentConfig cfg;
  cfg.crop_size = 64;
  EXPECT_TRUE(torch::equal(augment(img, cfg, 99), augment(img, cfg, 99)));
  EXPECT_FALSE(torch::equal(augment(img, cfg, 99), augment(img, cfg, 100)));
}

TEST(Augment, OutputIsCropSizedAndInRange) {
  const auto img = gradient_image(50, 70);
  AugmentConfig cfg;
  cfg.crop_size = 48;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto out = augment(img, cfg, s);
    ASSERT_EQ(out.sizes(), (std::vector<int64_t>{3, 48, 48}));
    ASSERT_GE(out.min().item<float>(), -1.0f);
    ASSERT_LE(out.max().item<float>(), 1.0f);
  }
}

TEST(Augment, FlipsHappenHalfTheTime) {
  const auto img = gradient_image(32, 32);
  auto cfg = identity_config(32);
  cfg.flip_horizontal = true;
  const auto plain = to_tensor(img);
  const auto flipped = plain.flip({2});
  int flips = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto out = augment(img, cfg, substream_seed(3, s));
    if (torch::equal(out, flipped))
      ++flips;
    else
      ASSERT_TRUE(torch::equal(out, plain));
  }
  EXPECT_GE(flips, 450);
  EXPECT_LE(flips, 550);
}

TEST(Augment, RotationDegreesStayWithinBound) {
  // A 180 degree rotation of a gradient would invert it; 30 degrees keeps the
  // red channel increasing left to right on average.
  const auto img = gradient_image(64, 64);
  auto cfg = identity_config(64);
  cfg.max_rotation_deg = 30.0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto out = augment(img, cfg, s);
    const auto red = out[0];
    EXPECT_GT(red.slice(1, 48, 64).mean().item<float>(), red.slice(1, 0, 16).mean().item<float>());
  }
}

TEST(Augment, InvalidConfigsAreRejected) {
  const auto img = gradient_image(32, 32);
  auto cfg = identity_config(40);
  EXPECT_THROW(augment(img, cfg, 0), ValidationError);
  cfg = identity_config(32);
  cfg.rescale_factor = 0.9;
  EXPECT_THROW(augment(img, cfg, 0), ValidationError);
  cfg = identity_config(32);
  cfg.max_rotation_deg = 200;
  EXPECT_THROW(augment(img, cfg, 0), ValidationError);
  cfg = identity_config(32);
  cfg.jitter_lo = 1.2;
  EXPECT_THROW(augment(img, cfg, 0), ValidationError);
  cfg = identity_config(35);
  cfg.rescale_factor = 1.1;
  EXPECT_NO_THROW(augment(img, cfg, 0));
}

TEST(BatchStreamTest, TwoBatchesPartitionAMinimalDataset) {
  BatchStream stream(32, 16, 1);
  for (int k = 0; k < 5; ++k) {
    const auto p = next_pair(stream);
    std::set<std::size_t> all(p.gen.begin(), p.gen.end());
    all.insert(p.disc.begin(), p.disc.end());
    EXPECT_EQ(all.size(), 32u);
    EXPECT_EQ(*all.rbegin(), 31u);
  }
}

TEST(BatchStreamTest, PairsAreAlwaysDisjoint) {
  BatchStream stream(101, 16, 2);
  for (int k = 0; k < 2000; ++k) {
    const auto p = stream.next_pair();
    ASSERT_EQ(p.gen.size(), 16u);
    ASSERT_EQ(p.disc.size(), 16u);
    std::set<std::size_t> g(p.gen.begin(), p.gen.end());
    ASSERT_EQ(g.size(), 16u);
    for (auto i : p.disc) ASSERT_FALSE(g.count(i));
    for (auto i : p.disc) ASSERT_LT(i, 101u);
  }
}

TEST(BatchStreamTest, FixedSeedReplaysIndexSequence) {
  BatchStream a(50, 4, 77), b(50, 4, 77), c(50, 4, 78);
  bool differs = false;
  for (int k = 0; k < 100; ++k) {
    const auto pa = a.next_pair(), pb = b.next_pair(), pc = c.next_pair();
    ASSERT_EQ(pa.gen, pb.gen);
    ASSERT_EQ(pa.disc, pb.disc);
    differs = differs || pa.gen != pc.gen;
  }
  EXPECT_TRUE(differs);
}

TEST(BatchStreamTest, SkipMatchesDrawing) {
  BatchStream a(40, 3, 9), b(40, 3, 9);
  for (int k = 0; k < 37; ++k) a.next_pair();
  b.skip(37);
  EXPECT_EQ(a.next_pair().gen, b.next_pair().gen);
}

TEST(BatchStreamTest, TooSmallDatasetNamesTheMinimum) {
  try {
    BatchStream s(31, 16, 0);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("at least 32"), std::string::npos) << e.what();
  }
}

TEST(BatchStreamTest, EpochCountsThousandBatchesByDefault) {
  BatchStream s(64, 2, 0);
  s.skip(999);
  EXPECT_EQ(s.epoch(), 0u);
  s.next_pair();
  EXPECT_EQ(s.epoch(), 1u);
  EXPECT_EQ(s.epoch_size(), 1000);
}

TEST(MakeBatch, DependsOnlyOnSeedStepAndSlot) {
  const auto dir = testing_util::scratch_dir("batch_toy");
  toy::generate_dataset(8, 2, dir);
  const auto xs = load_image_folder(dir / "x");
  AugmentConfig cfg;
  cfg.crop_size = 64;
  const std::vector<std::size_t> idx{1, 5, 2};
  const auto a = make_batch(xs, idx, cfg, 10, 3, 0);
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{3, 3, 64, 64}));
  EXPECT_TRUE(torch::equal(a, make_batch(xs, idx, cfg, 10, 3, 0)));
  EXPECT_FALSE(torch::equal(a, make_batch(xs, idx, cfg, 10, 3, 1)));
  EXPECT_FALSE(torch::equal(a, make_batch(xs, idx, cfg, 10, 4, 0)));
}
