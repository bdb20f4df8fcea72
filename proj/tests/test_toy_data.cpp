#include <cmath>
#include <numbers>
#include <fstream>
#include <map>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "ganimorph/toy_data.hpp"
#include "test_util.hpp"

using namespace ganimorph;
using namespace ganimorph::toy;

namespace {

ToySpec make_spec(int sides, std::array<double, 4> h, std::array<double, 2> d = {0, 0}, int size = 64) {
  ToySpec s;
  s.sides = sides;
  s.params.h = h;
  s.params.d = d;
  s.image_size = size;
  return s;
}

constexpr std::array<double, 4> kIdentity{1, 0, 0, 1};

// Strongly blue pixels: polygon fill, not dots or background.
cv::Mat blue_mask(const RgbImage& img) {
  cv::Mat m(img.height, img.width, CV_8U);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto* p = img.at(x, y);
      m.at<uchar>(y, x) = (int(p[2]) - int(p[0]) > 80) ? 255 : 0;
    }
  return m;
}

// Dark gray pixels: dot cores.
cv::Mat dot_mask(const RgbImage& img) {
  cv::Mat m(img.height, img.width, CV_8U);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto* p = img.at(x, y);
      m.at<uchar>(y, x) = std::max({p[0], p[1], p[2]}) < 130 ? 255 : 0;
    }
  return m;
}

struct Blob {
  double x, y;
};

// Centroids of connected components that stay clear of the border.
std::vector<Blob> interior_blobs(const cv::Mat& mask) {
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8);
  std::vector<Blob> out;
  for (int i = 1; i < n; ++i) {
    const int l = stats.at<int>(i, cv::CC_STAT_LEFT), t = stats.at<int>(i, cv::CC_STAT_TOP);
    const int w = stats.at<int>(i, cv::CC_STAT_WIDTH), h = stats.at<int>(i, cv::CC_STAT_HEIGHT);
    if (l <= 1 || t <= 1 || l + w >= mask.cols - 1 || t + h >= mask.rows - 1) continue;
    // Pixel centers sit at +0.5.
    out.push_back({centroids.at<double>(i, 0) + 0.5, centroids.at<double>(i, 1) + 0.5});
  }
  return out;
}

double coverage_area(const std::vector<std::uint8_t>& layer) {
  double s = 0;
  for (auto v : layer) s += v;
  return s / (kSupersample * kSupersample);
}

}  // namespace

TEST(SampleDeformation, SameSeedSameParams) {
  EXPECT_EQ(sample_deformation(123), sample_deformation(123));
  EXPECT_NE(sample_deformation(123), sample_deformation(124));
}

TEST(SampleDeformation, EntriesAreStandardNormalOverTenThousandSeeds) {
  constexpr int n = 10000;
  std::array<double, 6> sum{}, sq{};
  for (int s = 0; s < n; ++s) {
    const auto p = sample_deformation(substream_seed(99, s));
    const std::array<double, 6> v{p.h[0], p.h[1], p.h[2], p.h[3], p.d[0], p.d[1]};
    for (int k = 0; k < 6; ++k) sum[k] += v[k], sq[k] += v[k] * v[k];
  }
  for (int k = 0; k < 6; ++k) {
    const double mean = sum[k] / n;
    const double var = (sq[k] - n * mean * mean) / (n - 1);
    EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(double(n))) << "entry " << k;
    EXPECT_NEAR(var, 1.0, 0.1) << "entry " << k;
  }
}

TEST(ToySpecTest, JsonRoundTrip) {
  ToySpec s = make_spec(6, {0.3, -1.25, 2.0, 1e-7}, {0.125, -3.5}, 96);
  s.seed = 0xFFFFFFFFFFFFull;
  EXPECT_EQ(nlohmann::json(s).get<ToySpec>(), s);
  const auto p = sample_deformation(5);
  EXPECT_EQ(nlohmann::json(p).get<DeformationParams>(), p);
  EXPECT_EQ(nlohmann::json(DeformationParams::identity()).get<DeformationParams>(), DeformationParams::identity());
}

TEST(ToySpecTest, InvalidSpecsAreRejected) {
  EXPECT_THROW(render_domain_x(make_spec(2, kIdentity)), ValidationError);
  EXPECT_THROW(render_domain_x(make_spec(8, kIdentity)), ValidationError);
  EXPECT_THROW(render_domain_y(make_spec(4, kIdentity, {0, 0}, 30)), ValidationError);
  EXPECT_THROW(render_domain_y(make_spec(4, kIdentity, {0, 0}, 33)), ValidationError);
  EXPECT_NO_THROW(render_domain_x(make_spec(7, kIdentity, {0, 0}, 32)));
}

TEST(Render, IdentityPairsArePixelIdentical) {
  for (int sides = 3; sides <= 7; ++sides) {
    const auto spec = make_spec(sides, kIdentity);
    EXPECT_EQ(render_domain_x(spec), render_domain_y(spec)) << sides;
  }
}

TEST(Render, IdentityTriangleIsCenteredOverRegularGrid) {
  const auto spec = make_spec(3, kIdentity);
  const auto img = render_domain_x(spec);
  const auto cov = rasterize(spec, Domain::regular);
  double sx = 0, sy = 0, s = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const double w = cov.polygon[y * 64 + x];
      sx += w * (x + 0.5), sy += w * (y + 0.5), s += w;
    }
  // A triangle's area centroid is its circumcenter.
  EXPECT_NEAR(sx / s, 32.0, 0.1);
  EXPECT_NEAR(sy / s, 32.0, 0.1);
  const auto blobs = interior_blobs(dot_mask(img));
  ASSERT_GT(blobs.size(), 20u);
  for (const auto& b : blobs) {
    EXPECT_NEAR(std::remainder(b.x - 32.0, 8.0), 0.0, 0.3);
    EXPECT_NEAR(std::remainder(b.y - 32.0, 8.0), 0.0, 0.3);
  }
}

TEST(Render, DeterministicPerSpec) {
  const auto spec = draw_spec(42, 64);
  EXPECT_EQ(render_domain_x(spec), render_domain_x(spec));
  EXPECT_EQ(render_domain_y(spec), render_domain_y(spec));
  EXPECT_EQ(draw_spec(42, 64), spec);
}

TEST(Render, HalfSpacingDisplacementShiftsDotCentroids) {
  const auto base = render_domain_x(make_spec(4, kIdentity));
  const auto moved = render_domain_x(make_spec(4, kIdentity, {0.5, 0.0}));
  const auto a = interior_blobs(dot_mask(base));
  const auto b = interior_blobs(dot_mask(moved));
  ASSERT_GT(b.size(), 10u);
  int matched = 0;
  for (const auto& q : b) {
    // Nearest unshifted dot to the left by half a spacing.
    const Blob* best = nullptr;
    double best_d = 1e9;
    for (const auto& p : a) {
      const double d = std::hypot(q.x - 4.0 - p.x, q.y - p.y);
      if (d < best_d) best_d = d, best = &p;
    }
    if (best_d > 2.0) continue;
    EXPECT_NEAR(q.x - best->x, 4.0, 0.3);
    EXPECT_NEAR(q.y - best->y, 0.0, 0.3);
    ++matched;
  }
  EXPECT_GT(matched, 10);
}

TEST(Render, DoubledMatrixScalesPolygonAreaUpToFrameClipping) {
  // Identity square: a diamond of circumradius R = 0.3 W, area 2 R^2. Under
  // h = 2I it becomes |x| + |y| <= 2R clipped to |x|, |y| <= W/2, which cuts four
  // corner triangles with legs W - 2R.
  const double W = 64, R = 0.3 * W;
  const double identity_area = 2 * R * R;
  const double leg = W - 2 * R;
  const double doubled_area = W * W - 2 * leg * leg;
  const double expected_ratio = doubled_area / identity_area;
  EXPECT_NEAR(expected_ratio, 3.7778, 1e-3);

  const auto id = make_spec(4, kIdentity);
  const auto twice = make_spec(4, {2, 0, 0, 2});
  const double a1 = coverage_area(rasterize(id, Domain::deformed).polygon);
  const double a2 = coverage_area(rasterize(twice, Domain::deformed).polygon);
  EXPECT_NEAR(a1, identity_area, 0.01 * identity_area);
  EXPECT_NEAR(a2 / a1, expected_ratio, 0.02 * expected_ratio);

  // Mask pixel counts on the rendered images agree with the coverage layer
  // up to the dots drawn over the polygon.
  const double m1 = cv::countNonZero(blue_mask(render_domain_y(id)));
  const double m2 = cv::countNonZero(blue_mask(render_domain_y(twice)));
  EXPECT_NEAR(m2 / m1, expected_ratio, 0.05 * expected_ratio);
  // Unclipped, the ratio would be det(h) = 4; clipping removes the rest.
  EXPECT_LT(m2 / m1, 4.0);
}

TEST(Render, QuarterTurnRotatesPolygonMask) {
  const auto id = make_spec(3, kIdentity);
  const auto rot = make_spec(3, {0, -1, 1, 0});
  const auto a = blue_mask(render_domain_y(id));
  const auto b = blue_mask(render_domain_y(rot));
  // (x, y) -> c + (-(y - c), x - c): pixel (col, row) of b takes a(row = W-1-col, col = row).
  const int W = 64;
  cv::Mat rotated(W, W, CV_8U);
  for (int r = 0; r < W; ++r)
    for (int c = 0; c < W; ++c) rotated.at<uchar>(r, c) = a.at<uchar>(W - 1 - c, r);
  cv::Mat k = cv::getStructuringElement(cv::MORPH_RECT, {3, 3});
  cv::Mat rd, bd, miss1, miss2;
  cv::dilate(rotated, rd, k);
  cv::dilate(b, bd, k);
  cv::bitwise_and(b, ~rd, miss1);
  cv::bitwise_and(rotated, ~bd, miss2);
  EXPECT_EQ(cv::countNonZero(miss1), 0);
  EXPECT_EQ(cv::countNonZero(miss2), 0);
  EXPECT_GT(cv::countNonZero(b), 200);
}

TEST(Render, RegularDomainPolygonIsCenteredForDrawnSpecs) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto spec = draw_spec(substream_seed(5, s), 64);
    const auto cov = rasterize(spec, Domain::regular);
    double sx = 0, sy = 0, w = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double v = cov.polygon[y * 64 + x];
        sx += v * (x + 0.5), sy += v * (y + 0.5), w += v;
      }
    ASSERT_LT(std::hypot(sx / w - 32.0, sy / w - 32.0), 1.0) << "seed index " << s;
  }
}

TEST(Render, DeformedDomainDotsFormAxisAlignedGrid) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto spec = draw_spec(substream_seed(6, s), 64);
    const auto blobs = interior_blobs(dot_mask(render_domain_y(spec)));
    // Dots may merge with the polygon's anti-aliased edge; isolated ones must sit on the grid.
    int on_grid = 0;
    for (const auto& b : blobs) {
      EXPECT_LT(std::abs(std::remainder(b.x - 32.0, 8.0)), 1.0);
      EXPECT_LT(std::abs(std::remainder(b.y - 32.0, 8.0)), 1.0);
      ++on_grid;
    }
    EXPECT_GT(on_grid, 10);
    // The analytic centers are exactly the regular lattice.
    for (const auto& p : dot_centers(spec, Domain::deformed)) {
      EXPECT_DOUBLE_EQ(std::remainder(p.x - 32.0, 8.0), 0.0);
      EXPECT_DOUBLE_EQ(std::remainder(p.y - 32.0, 8.0), 0.0);
    }
  }
}

TEST(Render, PairsShareTheirSpec) {
  const auto spec = draw_spec(77, 64);
  const auto sample = make_sample(spec);
  EXPECT_EQ(sample.spec, spec);
  EXPECT_EQ(sample.x_image, render_domain_x(spec));
  EXPECT_EQ(sample.y_image, render_domain_y(spec));
  EXPECT_EQ(sample.x_image.width, 64);
  EXPECT_EQ(sample.y_image.height, 64);
}

TEST(Degeneracy, NearSingularAndOffFrameSpecsAreFlagged) {
  EXPECT_TRUE(is_degenerate(make_spec(4, {0.05, 0, 0, 0.05})));
  EXPECT_TRUE(is_degenerate(make_spec(4, kIdentity, {10.0, 0.0})));
  EXPECT_FALSE(is_degenerate(make_spec(4, kIdentity)));
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto spec = draw_spec(substream_seed(8, s), 64);
    ASSERT_GE(std::abs(spec.params.det()), kMinAbsDet);
    ASSERT_GE(in_frame_fraction(spec), kMinInFrameFraction);
  }
}

TEST(Clipping, MatchesGridCountOracle) {
  // Brute-force point sampling of the in-frame part of deformed polygons.
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto spec = draw_spec(substream_seed(9, s), 64);
    const auto verts = polygon_vertices(spec, Domain::deformed);
    const int n = 640;
    int inside = 0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const double x = (i + 0.5) * 64.0 / n, y = (j + 0.5) * 64.0 / n;
        bool in = false;
        for (std::size_t a = 0, b = verts.size() - 1; a < verts.size(); b = a++)
          if ((verts[a].y > y) != (verts[b].y > y) &&
              x < verts[a].x + (y - verts[a].y) * (verts[b].x - verts[a].x) / (verts[b].y - verts[a].y))
            in = !in;
        inside += in;
      }
    const double oracle = inside * (64.0 / n) * (64.0 / n);
    EXPECT_NEAR(polygon_area(clip_to_square(verts, 0.0, 64.0)), oracle, 0.01 * oracle + 0.5);
  }
}

TEST(GenerateDataset, EmptyRequestWritesEmptyManifest) {
  const auto dir = testing_util::scratch_dir("toy_empty");
  const auto records = generate_dataset(0, 1, dir);
  EXPECT_TRUE(records.empty());
  EXPECT_EQ(testing_util::read_bytes(dir / kManifestName), "");
  EXPECT_TRUE(std::filesystem::is_empty(dir / "x"));
  EXPECT_TRUE(std::filesystem::is_empty(dir / "y"));
}

TEST(GenerateDataset, SameSeedIsByteIdentical) {
  const auto a = testing_util::scratch_dir("toy_a");
  const auto b = testing_util::scratch_dir("toy_b");
  generate_dataset(10, 7, a);
  generate_dataset(10, 7, b);
  EXPECT_TRUE(testing_util::same_tree(a, b));
  const auto c = testing_util::scratch_dir("toy_c");
  generate_dataset(10, 8, c);
  EXPECT_FALSE(testing_util::same_tree(a, c));
}

TEST(GenerateDataset, SideCountsCoverAllValues) {
  const auto dir = testing_util::scratch_dir("toy_sides");
  const auto records = generate_dataset(100, 1, dir);
  std::map<int, int> counts;
  for (const auto& r : records) counts[r.spec.sides]++;
  for (int s = 3; s <= 7; ++s) EXPECT_GE(counts[s], 5) << "sides " << s;
  EXPECT_EQ(read_manifest(dir), records);
}

TEST(GenerateDataset, FilesDecodeToTheRenderedPixels) {
  const auto dir = testing_util::scratch_dir("toy_decode");
  const auto records = generate_dataset(5, 3, dir, 48);
  for (const auto& r : records) {
    EXPECT_EQ(read_image(dir / r.x_file), render_domain_x(r.spec));
    EXPECT_EQ(read_image(dir / r.y_file), render_domain_y(r.spec));
    EXPECT_EQ(r.spec.image_size, 48);
  }
}

TEST(GenerateDataset, UnwritableDirectoryNamesThePath) {
  const auto dir = testing_util::scratch_dir("toy_blocked");
  const auto blocker = dir / "file";
  std::ofstream(blocker) << "x";
  try {
    generate_dataset(1, 1, blocker / "sub");
    FAIL() << "expected an I/O error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("file/sub"), std::string::npos) << e.what();
  }
}
