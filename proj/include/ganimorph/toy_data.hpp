#pragma once

// Procedural paired toy domains: a regular polygon with a deformed dot lattice
// (domain X) and the deformed polygon over a regular lattice (domain Y). Each
// pair is generated from one ToySpec, so X -> Y is a bijection.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "image.hpp"
#include "random.hpp"

namespace ganimorph::toy {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

/// 2x2 deformation matrix (row-major) and displacement in lattice-spacing units.
struct DeformationParams {
  std::array<double, 4> h{1.0, 0.0, 0.0, 1.0};
  std::array<double, 2> d{0.0, 0.0};

  static DeformationParams identity() { return {}; }

  double det() const { return h[0] * h[3] - h[1] * h[2]; }
  Vec2 apply(Vec2 v) const { return {h[0] * v.x + h[1] * v.y, h[2] * v.x + h[3] * v.y}; }

  bool operator==(const DeformationParams&) const = default;
};

inline void to_json(nlohmann::json& j, const DeformationParams& p) {
  j = nlohmann::json{{"h", p.h}, {"d", p.d}};
}

inline void from_json(const nlohmann::json& j, DeformationParams& p) {
  j.at("h").get_to(p.h);
  j.at("d").get_to(p.d);
}

/// Draws the six entries of (h, d) i.i.d. from the standard normal.
inline DeformationParams sample_deformation(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DeformationParams p;
  for (auto& v : p.h) v = normal(gen);
  for (auto& v : p.d) v = normal(gen);
  return p;
}

struct ToySpec {
  int sides = 4;
  DeformationParams params;
  int image_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (sides < 3 || sides > 7)
      throw ValidationError("toy spec: sides must be in 3..7, got " + std::to_string(sides));
    if (image_size < 32 || image_size % 2 != 0)
      throw ValidationError("toy spec: image_size must be even and >= 32, got " +
                            std::to_string(image_size));
  }

  bool operator==(const ToySpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ToySpec& s) {
  j = nlohmann::json{{"sides", s.sides},
                     {"h", s.params.h},
                     {"d", s.params.d},
                     {"image_size", s.image_size},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, ToySpec& s) {
  j.at("sides").get_to(s.sides);
  j.at("h").get_to(s.params.h);
  j.at("d").get_to(s.params.d);
  j.at("image_size").get_to(s.image_size);
  j.at("seed").get_to(s.seed);
}

enum class Domain { regular, deformed };

/// Layout constants in pixels for a given image size.
struct Geometry {
  double center;
  double radius;      // polygon circumradius
  double spacing;     // dot lattice pitch
  double dot_radius;
};

inline Geometry geometry(int image_size) {
  const double w = image_size;
  return {w / 2.0, 0.30 * w, w / 8.0, w / 48.0};
}

namespace palette {
inline constexpr std::array<std::uint8_t, 3> background{245, 245, 240};
inline constexpr std::array<std::uint8_t, 3> polygon{20, 60, 220};
inline constexpr std::array<std::uint8_t, 3> dot{64, 64, 64};
}  // namespace palette

inline constexpr int kSupersample = 4;

/// Polygon vertices in pixel coordinates (x right, y down). One vertex points up.
inline std::vector<Vec2> polygon_vertices(const ToySpec& spec, Domain domain) {
  const auto g = geometry(spec.image_size);
  const Vec2 c{g.center, g.center};
  const Vec2 shift = g.spacing * Vec2{spec.params.d[0], spec.params.d[1]};
  std::vector<Vec2> out;
  out.reserve(spec.sides);
  for (int k = 0; k < spec.sides; ++k) {
    const double a = 2.0 * std::numbers::pi * k / spec.sides;
    const Vec2 offset{g.radius * std::sin(a), -g.radius * std::cos(a)};
    if (domain == Domain::regular)
      out.push_back(c + offset);
    else
      out.push_back(c + spec.params.apply(offset) + shift);
  }
  return out;
}

/// Centers of every lattice dot that lands inside the frame.
inline std::vector<Vec2> dot_centers(const ToySpec& spec, Domain domain) {
  const auto g = geometry(spec.image_size);
  const double w = spec.image_size;
  const Vec2 c{g.center, g.center};
  std::vector<Vec2> out;
  auto in_frame = [w](Vec2 p) { return p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < w; };

  if (domain == Domain::deformed) {
    const int n = static_cast<int>(std::ceil(g.center / g.spacing));
    for (int j = -n; j <= n; ++j)
      for (int i = -n; i <= n; ++i) {
        const Vec2 p = c + g.spacing * Vec2{double(i), double(j)};
        if (in_frame(p)) out.push_back(p);
      }
    return out;
  }

  // Lattice coordinates of the frame corners bound the integer points to visit.
  const auto& h = spec.params.h;
  const double det = spec.params.det();
  constexpr int kMaxExtent = 256;
  int lo_i = -kMaxExtent, hi_i = kMaxExtent, lo_j = -kMaxExtent, hi_j = kMaxExtent;
  if (std::abs(det) > 1e-9) {
    double min_i = 1e300, max_i = -1e300, min_j = 1e300, max_j = -1e300;
    for (Vec2 corner : {Vec2{0, 0}, Vec2{w, 0}, Vec2{0, w}, Vec2{w, w}}) {
      const Vec2 q = (1.0 / g.spacing) * (corner - c) - Vec2{spec.params.d[0], spec.params.d[1]};
      const double li = (h[3] * q.x - h[1] * q.y) / det;
      const double lj = (-h[2] * q.x + h[0] * q.y) / det;
      min_i = std::min(min_i, li);
      max_i = std::max(max_i, li);
      min_j = std::min(min_j, lj);
      max_j = std::max(max_j, lj);
    }
    lo_i = std::max(lo_i, static_cast<int>(std::floor(min_i)) - 1);
    hi_i = std::min(hi_i, static_cast<int>(std::ceil(max_i)) + 1);
    lo_j = std::max(lo_j, static_cast<int>(std::floor(min_j)) - 1);
    hi_j = std::min(hi_j, static_cast<int>(std::ceil(max_j)) + 1);
  }
  const Vec2 shift{spec.params.d[0], spec.params.d[1]};
  for (int j = lo_j; j <= hi_j; ++j)
    for (int i = lo_i; i <= hi_i; ++i) {
      const Vec2 p = c + g.spacing * (spec.params.apply(Vec2{double(i), double(j)}) + shift);
      if (in_frame(p)) out.push_back(p);
    }
  return out;
}

/// Shoelace area (absolute).
inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2 p = poly[i];
    const Vec2 q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return std::abs(a) / 2.0;
}

/// Sutherland-Hodgman clip of a polygon against the square [lo, hi]^2.
inline std::vector<Vec2> clip_to_square(std::vector<Vec2> poly, double lo, double hi) {
  auto clip = [&](auto inside, auto intersect) {
    std::vector<Vec2> out;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2 cur = poly[i];
      const Vec2 prev = poly[(i + poly.size() - 1) % poly.size()];
      const bool ci = inside(cur), pi = inside(prev);
      if (ci) {
        if (!pi) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (pi) {
        out.push_back(intersect(prev, cur));
      }
    }
    poly = std::move(out);
  };
  auto at_x = [](double x) {
    return [x](Vec2 a, Vec2 b) { return Vec2{x, a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)}; };
  };
  auto at_y = [](double y) {
    return [y](Vec2 a, Vec2 b) { return Vec2{a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y), y}; };
  };
  clip([&](Vec2 p) { return p.x >= lo; }, at_x(lo));
  if (!poly.empty()) clip([&](Vec2 p) { return p.x <= hi; }, at_x(hi));
  if (!poly.empty()) clip([&](Vec2 p) { return p.y >= lo; }, at_y(lo));
  if (!poly.empty()) clip([&](Vec2 p) { return p.y <= hi; }, at_y(hi));
  return poly;
}

/// Fraction of the deformed polygon's area that lies inside the frame.
inline double in_frame_fraction(const ToySpec& spec) {
  const auto poly = polygon_vertices(spec, Domain::deformed);
  const double full = polygon_area(poly);
  if (full <= 0.0) return 0.0;
  return polygon_area(clip_to_square(poly, 0.0, spec.image_size)) / full;
}

inline constexpr double kMinAbsDet = 0.1;
inline constexpr double kMinInFrameFraction = 0.5;

/// Specs that would hide the polygon (near-singular h, or mostly off-frame).
inline bool is_degenerate(const ToySpec& spec) {
  return std::abs(spec.params.det()) < kMinAbsDet || in_frame_fraction(spec) < kMinInFrameFraction;
}

/// Draws a spec from `seed`: sides from substream 0, deformation from substreams
/// 1, 2, ... until a non-degenerate one appears.
inline ToySpec draw_spec(std::uint64_t seed, int image_size) {
  std::mt19937_64 gen(substream_seed(seed, 0));
  ToySpec spec;
  spec.sides = std::uniform_int_distribution<int>(3, 7)(gen);
  spec.image_size = image_size;
  spec.seed = seed;
  spec.validate();
  for (std::uint64_t k = 1; k < 10000; ++k) {
    spec.params = sample_deformation(substream_seed(seed, k));
    if (!is_degenerate(spec)) return spec;
  }
  throw ValidationError("toy spec: no admissible deformation found for seed " +
                        std::to_string(seed));
}

/// Per-pixel subsample counts (0..kSupersample^2) of each layer.
struct Coverage {
  int size = 0;
  std::vector<std::uint8_t> polygon;
  std::vector<std::uint8_t> dots;
  std::vector<std::uint8_t> visible_polygon;  // polygon and not covered by a dot
};

inline Coverage rasterize(const ToySpec& spec, Domain domain) {
  spec.validate();
  const int w = spec.image_size;
  const int sw = w * kSupersample;
  const double step = 1.0 / kSupersample;
  std::vector<std::uint8_t> poly_mask(static_cast<std::size_t>(sw) * sw, 0);
  std::vector<std::uint8_t> dot_mask(poly_mask.size(), 0);

  // Even-odd scanline fill at subsample centers.
  const auto verts = polygon_vertices(spec, domain);
  std::vector<double> xs;
  for (int sy = 0; sy < sw; ++sy) {
    const double y = (sy + 0.5) * step;
    xs.clear();
    for (std::size_t i = 0; i < verts.size(); ++i) {
      const Vec2 a = verts[i];
      const Vec2 b = verts[(i + 1) % verts.size()];
      if ((a.y <= y) != (b.y <= y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // Subsample sx is inside when xs[k] < (sx + 0.5) * step <= xs[k + 1].
      const int first = std::max(0, static_cast<int>(std::floor(xs[k] / step - 0.5)) + 1);
      const int last = std::min(sw - 1, static_cast<int>(std::floor(xs[k + 1] / step - 0.5)));
      for (int sx = first; sx <= last; ++sx) poly_mask[static_cast<std::size_t>(sy) * sw + sx] = 1;
    }
  }

  const double r = geometry(w).dot_radius;
  for (Vec2 p : dot_centers(spec, domain)) {
    const int x0 = std::max(0, static_cast<int>(std::floor((p.x - r) / step)));
    const int x1 = std::min(sw - 1, static_cast<int>(std::ceil((p.x + r) / step)));
    const int y0 = std::max(0, static_cast<int>(std::floor((p.y - r) / step)));
    const int y1 = std::min(sw - 1, static_cast<int>(std::ceil((p.y + r) / step)));
    for (int sy = y0; sy <= y1; ++sy)
      for (int sx = x0; sx <= x1; ++sx) {
        const double dx = (sx + 0.5) * step - p.x;
        const double dy = (sy + 0.5) * step - p.y;
        if (dx * dx + dy * dy <= r * r) dot_mask[static_cast<std::size_t>(sy) * sw + sx] = 1;
      }
  }

  Coverage cov;
  cov.size = w;
  const auto n = static_cast<std::size_t>(w) * w;
  cov.polygon.assign(n, 0);
  cov.dots.assign(n, 0);
  cov.visible_polygon.assign(n, 0);
  for (int sy = 0; sy < sw; ++sy)
    for (int sx = 0; sx < sw; ++sx) {
      const auto s = static_cast<std::size_t>(sy) * sw + sx;
      const auto px = static_cast<std::size_t>(sy / kSupersample) * w + sx / kSupersample;
      cov.polygon[px] += poly_mask[s];
      cov.dots[px] += dot_mask[s];
      cov.visible_polygon[px] += poly_mask[s] & (1 - dot_mask[s]);
    }
  return cov;
}

/// Box-filters the subsample labels into 8-bit RGB (dots drawn over the polygon).
inline RgbImage composite(const Coverage& cov) {
  constexpr int total = kSupersample * kSupersample;
  RgbImage img(cov.size, cov.size);
  for (std::size_t i = 0; i < cov.dots.size(); ++i) {
    const int nd = cov.dots[i];
    const int np = cov.visible_polygon[i];
    const int nb = total - nd - np;
    for (int ch = 0; ch < 3; ++ch) {
      const int sum = nd * palette::dot[ch] + np * palette::polygon[ch] + nb * palette::background[ch];
      img.pixels[i * 3 + ch] = static_cast<std::uint8_t>((sum + total / 2) / total);
    }
  }
  return img;
}

inline RgbImage render(const ToySpec& spec, Domain domain) {
  return composite(rasterize(spec, domain));
}

inline RgbImage render_domain_x(const ToySpec& spec) { return render(spec, Domain::regular); }
inline RgbImage render_domain_y(const ToySpec& spec) { return render(spec, Domain::deformed); }

struct ToySample {
  RgbImage x_image;
  RgbImage y_image;
  ToySpec spec;
};

inline ToySample make_sample(const ToySpec& spec) {
  return {render_domain_x(spec), render_domain_y(spec), spec};
}

struct ManifestRecord {
  int index = 0;
  std::string x_file;  // relative to the dataset root
  std::string y_file;
  ToySpec spec;

  bool operator==(const ManifestRecord&) const = default;
};

inline void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = nlohmann::json{{"index", r.index},           {"x", r.x_file},
                     {"y", r.y_file},              {"sides", r.spec.sides},
                     {"h", r.spec.params.h},       {"d", r.spec.params.d},
                     {"image_size", r.spec.image_size}, {"seed", r.spec.seed}};
}

inline void from_json(const nlohmann::json& j, ManifestRecord& r) {
  j.at("index").get_to(r.index);
  j.at("x").get_to(r.x_file);
  j.at("y").get_to(r.y_file);
  from_json(j, r.spec);
}

inline constexpr const char* kManifestName = "manifest.jsonl";

/// Writes `<out>/x/NNNNNN.png`, `<out>/y/NNNNNN.png` and `<out>/manifest.jsonl`.
inline std::vector<ManifestRecord> generate_dataset(int n, std::uint64_t seed,
                                                    const std::filesystem::path& out_dir,
                                                    int image_size = 64) {
  namespace fs = std::filesystem;
  if (n < 0) throw ValidationError("gen-toy: n must be non-negative");
  ToySpec{4, {}, image_size, 0}.validate();
  for (const auto& dir : {out_dir, out_dir / "x", out_dir / "y"}) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }

  std::vector<ManifestRecord> records;
  records.reserve(n);
  for (int i = 0; i < n; ++i) {
    ManifestRecord rec;
    rec.index = i;
    rec.spec = draw_spec(substream_seed(seed, static_cast<std::uint64_t>(i)), image_size);
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", i);
    rec.x_file = std::string("x/") + name;
    rec.y_file = std::string("y/") + name;
    const auto sample = make_sample(rec.spec);
    write_png(out_dir / rec.x_file, sample.x_image);
    write_png(out_dir / rec.y_file, sample.y_image);
    records.push_back(std::move(rec));
  }

  const auto manifest_path = out_dir / kManifestName;
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + manifest_path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
  if (!out) throw IoError("cannot write manifest: " + manifest_path.string());
  return records;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest: " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace ganimorph::toy
