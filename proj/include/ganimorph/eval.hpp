#pragma once

// Toy-benchmark scoring: polygon boundary extraction, the directed Hausdorff
// distance between sampled boundaries, and cycle reconstruction metrics.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "error.hpp"
#include "image.hpp"
#include "losses.hpp"
#include "toy_data.hpp"

namespace ganimorph::eval {

/// Point in the unit square, origin at the bottom-left corner.
struct Point {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point&) const = default;
};

using PointSet = std::vector<Point>;

inline constexpr int kBoundarySamples = 500;

inline void validate_unit_square(const PointSet& s) {
  for (const auto& p : s)
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw ValidationError("point set: coordinates must lie in the unit square");
}

/// max over generated points of the distance to the nearest reference point.
inline double hausdorff(const PointSet& ref, const PointSet& gen) {
  if (ref.empty() || gen.empty()) throw ValidationError("hausdorff: point sets must be non-empty");
  double worst = 0.0;
  for (const auto& g : gen) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : ref) {
      const double dx = g.x - r.x;
      const double dy = g.y - r.y;
      best = std::min(best, dx * dx + dy * dy);
      if (best <= worst) break;  // cannot raise the max
    }
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

inline double hausdorff_symmetric(const PointSet& a, const PointSet& b) {
  return std::max(hausdorff(a, b), hausdorff(b, a));
}

/// `n` points equally spaced by arc length along a closed polyline, starting at
/// its first vertex.
inline PointSet sample_closed_polyline(std::span<const Point> verts, int n) {
  if (verts.empty() || n <= 0) return {};
  std::vector<double> cumulative{0.0};
  for (std::size_t i = 0; i < verts.size(); ++i) {
    const auto& a = verts[i];
    const auto& b = verts[(i + 1) % verts.size()];
    cumulative.push_back(cumulative.back() + std::hypot(b.x - a.x, b.y - a.y));
  }
  const double perimeter = cumulative.back();
  PointSet out;
  out.reserve(n);
  std::size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    const double t = perimeter * k / n;
    while (seg + 1 < verts.size() && cumulative[seg + 1] <= t) ++seg;
    const auto& a = verts[seg];
    const auto& b = verts[(seg + 1) % verts.size()];
    const double len = cumulative[seg + 1] - cumulative[seg];
    const double u = len > 0.0 ? (t - cumulative[seg]) / len : 0.0;
    out.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
  }
  return out;
}

/// Pixel coordinates (x right, y down) to the unit square (y up).
inline Point to_unit(double px, double py, int size) {
  return {std::clamp(px / size, 0.0, 1.0), std::clamp(1.0 - py / size, 0.0, 1.0)};
}

/// Analytic polygon boundary for a toy spec, clipped to the frame.
inline PointSet ground_truth_boundary(const toy::ToySpec& spec, toy::Domain domain,
                                      int samples = kBoundarySamples) {
  const auto clipped = toy::clip_to_square(toy::polygon_vertices(spec, domain), 0.0, spec.image_size);
  std::vector<Point> verts;
  for (const auto& v : clipped) verts.push_back(to_unit(v.x, v.y, spec.image_size));
  return sample_closed_polyline(verts, samples);
}

/// Pixels whose blue channel dominates by this many levels belong to the polygon
/// (a clean edge pixel reaches it at about half coverage).
inline constexpr int kBluenessThreshold = 78;

/// Contours are traced on a mask upsampled by this factor so points sit near
/// pixel edges rather than on the centers of boundary pixels.
inline constexpr int kContourUpsample = 4;

/// Binary mask (255 = polygon colour) of an RGB image.
inline cv::Mat polygon_mask(const RgbImage& img) {
  cv::Mat mask(img.height, img.width, CV_8UC1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto* p = img.at(x, y);
      const int blueness = int(p[2]) - std::max<int>(p[0], p[1]);
      mask.at<std::uint8_t>(y, x) = blueness >= kBluenessThreshold ? 255 : 0;
    }
  return mask;
}

/// Boundary of the largest polygon-coloured region, resampled by arc length.
/// Returns nullopt when no such region exists.
inline std::optional<PointSet> extract_polygon_boundary(const RgbImage& img, int samples = kBoundarySamples) {
  if (img.width <= 0 || img.height <= 0) return std::nullopt;
  auto mask = polygon_mask(img);

  // Dots drawn over the polygon bite notches into its edge, and squashed
  // lattices merge into stripes several pixels wide. A closing with a disk of
  // radius size/12 fills them; it runs on the upsampled mask through two exact
  // distance transforms. Replicated padding keeps the frame from eroding or
  // filling the region.
  const int size = std::min(img.width, img.height);
  cv::resize(mask, mask, {}, kContourUpsample, kContourUpsample, cv::INTER_NEAREST);
  const double radius = std::max(1.0, size / 12.0) * kContourUpsample;
  const int pad = static_cast<int>(std::ceil(radius)) + 2;
  cv::Mat padded, dist, dilated;
  cv::copyMakeBorder(mask, padded, pad, pad, pad, pad, cv::BORDER_REPLICATE);
  cv::distanceTransform(~padded, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE);
  dilated = dist <= radius;
  cv::distanceTransform(dilated, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE);
  const cv::Mat closed = dist > radius;
  mask = closed(cv::Rect(pad, pad, mask.cols, mask.rows)).clone();

  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(mask, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
  const std::vector<cv::Point>* best = nullptr;
  double best_area = 0.0;
  for (const auto& c : contours) {
    const double a = cv::contourArea(c);
    if (a > best_area) {
      best_area = a;
      best = &c;
    }
  }
  // A region below four pixels is noise, not a polygon.
  if (!best || best_area < 4.0 * kContourUpsample * kContourUpsample) return std::nullopt;

  std::vector<Point> verts;
  verts.reserve(best->size());
  for (const auto& p : *best)
    verts.push_back(to_unit((p.x + 0.5) / kContourUpsample, (p.y + 0.5) / kContourUpsample, size));
  return sample_closed_polyline(verts, samples);
}

// ---------------------------------------------------------------------------
// Toy evaluation

enum class Direction { x_to_y, y_to_x };

inline std::string_view to_string(Direction d) { return d == Direction::x_to_y ? "x2y" : "y2x"; }

inline Direction parse_direction(std::string_view s) {
  if (s == "x2y" || s == "X->Y" || s == "x_to_y") return Direction::x_to_y;
  if (s == "y2x" || s == "Y->X" || s == "y_to_x") return Direction::y_to_x;
  throw ConfigError("unknown direction '" + std::string(s) + "' (expected x2y or y2x)");
}

/// Batched image translation, [B, 3, H, W] -> [B, 3, H, W] in [-1, 1].
using Translator = std::function<torch::Tensor(const torch::Tensor&)>;

struct SampleScore {
  int index = 0;
  std::optional<double> distance;  // nullopt: no polygon detected
};

struct ToyEvalSummary {
  std::string direction;
  std::vector<SampleScore> rows;
  int failures = 0;
  double failure_rate = 0.0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
};

/// Scores output images against the analytic boundaries of their specs in the
/// target domain.
inline ToyEvalSummary evaluate_images(std::span<const RgbImage> outputs, std::span<const toy::ToySpec> specs,
                                      toy::Domain target, std::span<const int> indices = {}) {
  if (outputs.size() != specs.size()) throw ValidationError("evaluate: outputs and specs differ in count");
  ToyEvalSummary s;
  s.direction = target == toy::Domain::deformed ? "x2y" : "y2x";
  std::vector<double> distances;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    SampleScore row;
    row.index = indices.empty() ? static_cast<int>(i) : indices[i];
    if (auto gen = extract_polygon_boundary(outputs[i])) {
      row.distance = hausdorff(ground_truth_boundary(specs[i], target), *gen);
      distances.push_back(*row.distance);
    } else {
      ++s.failures;
    }
    s.rows.push_back(row);
  }
  if (!outputs.empty()) s.failure_rate = double(s.failures) / outputs.size();
  if (!distances.empty()) {
    double sum = 0.0;
    for (double d : distances) sum += d;
    s.mean = sum / distances.size();
    double ss = 0.0;
    for (double d : distances) ss += (d - s.mean) * (d - s.mean);
    s.std = distances.size() > 1 ? std::sqrt(ss / (distances.size() - 1)) : 0.0;
  }
  return s;
}

/// Translates every manifest sample in the given direction (up to `limit`,
/// 0 = all) and scores the outputs.
inline ToyEvalSummary evaluate_toy(const Translator& translate, const std::filesystem::path& dataset_dir,
                                   Direction direction, int limit = 0, int batch = 16,
                                   std::vector<RgbImage>* outputs_out = nullptr) {
  auto records = toy::read_manifest(dataset_dir);
  if (limit > 0 && static_cast<std::size_t>(limit) < records.size()) records.resize(limit);
  std::vector<RgbImage> outputs;
  std::vector<toy::ToySpec> specs;
  std::vector<int> indices;
  for (std::size_t start = 0; start < records.size(); start += batch) {
    const auto end = std::min(records.size(), start + batch);
    std::vector<torch::Tensor> inputs;
    for (auto i = start; i < end; ++i) {
      const auto& r = records[i];
      const auto file = dataset_dir / (direction == Direction::x_to_y ? r.x_file : r.y_file);
      auto img = read_image(file);
      if (img.pixels.empty()) throw IoError("cannot decode " + file.string());
      inputs.push_back(to_tensor(img));
      specs.push_back(r.spec);
      indices.push_back(r.index);
    }
    torch::NoGradGuard guard;
    auto out = translate(torch::stack(inputs));
    for (int64_t k = 0; k < out.size(0); ++k) outputs.push_back(to_image(out[k]));
  }
  auto summary = evaluate_images(outputs, specs,
                                 direction == Direction::x_to_y ? toy::Domain::deformed : toy::Domain::regular,
                                 indices);
  if (outputs_out) *outputs_out = std::move(outputs);
  return summary;
}

inline nlohmann::json to_json(const SampleScore& r) {
  nlohmann::json j{{"index", r.index}};
  if (r.distance)
    j["hausdorff"] = *r.distance;
  else
    j["hausdorff"] = nullptr, j["failure"] = "no_polygon";
  return j;
}

inline nlohmann::json summary_json(const ToyEvalSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"summary", true},          {"direction", s.direction},     {"samples", s.rows.size()},
          {"failures", s.failures},   {"failure_rate", s.failure_rate}, {"mean", num(s.mean)},
          {"std", num(s.std)}};
}

/// One record per sample followed by one summary record.
inline std::string summary_records(const ToyEvalSummary& s) {
  std::string out;
  for (const auto& r : s.rows) out += to_json(r).dump() + "\n";
  out += summary_json(s).dump() + "\n";
  return out;
}

inline std::string summary_table(const ToyEvalSummary& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "direction  samples  failures  failure_rate  mean_hausdorff  std\n";
  os << std::left << std::setw(11) << s.direction << std::setw(9) << s.rows.size() << std::setw(10) << s.failures
     << std::setw(14) << s.failure_rate << std::setw(16) << s.mean << s.std << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Cycle metrics and diversity

struct CycleSummary {
  double ms_ssim_x = 0.0;  // MS-SSIM(F(G(x)), x)
  double ms_ssim_y = 0.0;  // MS-SSIM(G(F(y)), y)
  double l1_x = 0.0;
  double l1_y = 0.0;
};

/// Per-sample reconstruction scores averaged over each domain.
inline CycleSummary cycle_metrics(const Translator& g, const Translator& f, std::span<const torch::Tensor> xs,
                                  std::span<const torch::Tensor> ys, const loss::MsSsimOptions& opts) {
  if (xs.empty() || ys.empty()) throw ValidationError("cycle_metrics: empty dataset");
  torch::NoGradGuard guard;
  CycleSummary s;
  auto score = [&](const Translator& first, const Translator& second, std::span<const torch::Tensor> items,
                   double& ms, double& l1) {
    double ms_sum = 0.0, l1_sum = 0.0;
    for (const auto& item : items) {
      auto x = item.dim() == 3 ? item.unsqueeze(0) : item;
      auto rec = second(first(x));
      ms_sum += loss::ms_ssim(rec.to(torch::kFloat64), x.to(torch::kFloat64), opts).item<double>();
      l1_sum += loss::l1_loss(rec.to(torch::kFloat64), x.to(torch::kFloat64)).item<double>();
    }
    ms = ms_sum / items.size();
    l1 = l1_sum / items.size();
  };
  score(g, f, xs, s.ms_ssim_x, s.l1_x);
  score(f, g, ys, s.ms_ssim_y, s.l1_y);
  return s;
}

/// Mean over unordered pairs of the mean absolute difference between outputs.
inline double pairwise_diversity(std::span<const torch::Tensor> outputs) {
  if (outputs.size() < 2) throw ValidationError("pairwise_diversity: need at least two outputs");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    for (std::size_t j = i + 1; j < outputs.size(); ++j, ++pairs)
      sum += (outputs[i] - outputs[j]).abs().mean().item<double>();
  return sum / pairs;
}

}  // namespace ganimorph::eval
