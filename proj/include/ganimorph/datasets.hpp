#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "error.hpp"
#include "image.hpp"
#include "random.hpp"

namespace ganimorph::data {

struct LoadWarning {
  std::filesystem::path file;
  std::string reason;
};

inline bool has_image_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const char* e : {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp", ".ppm", ".pgm"})
    if (ext == e) return true;
  return false;
}

/// In-memory image dataset, files ordered by name.
class ImageFolder {
 public:
  static ImageFolder load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("not a readable directory: " + dir.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir, ec))
      if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
    if (ec) throw IoError("cannot list directory " + dir.string() + ": " + ec.message());
    std::sort(files.begin(), files.end());

    ImageFolder folder;
    folder.root_ = dir;
    for (const auto& f : files) {
      auto img = read_image(f);
      if (img.pixels.empty()) {
        folder.warnings_.push_back({f, "undecodable image"});
        std::cerr << "warning: skipping undecodable image " << f.string() << '\n';
        continue;
      }
      folder.paths_.push_back(f);
      folder.images_.push_back(std::move(img));
    }
    if (folder.images_.empty())
      throw IoError("no decodable images in " + dir.string() + " (" +
                    std::to_string(folder.warnings_.size()) + " skipped)");
    return folder;
  }

  std::size_t size() const { return images_.size(); }
  const RgbImage& image(std::size_t i) const { return images_.at(i); }
  const std::filesystem::path& path(std::size_t i) const { return paths_.at(i); }
  const std::filesystem::path& root() const { return root_; }
  const std::vector<LoadWarning>& warnings() const { return warnings_; }

  /// [3, H, W] in [-1, 1].
  torch::Tensor tensor(std::size_t i) const { return to_tensor(image(i)); }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> paths_;
  std::vector<RgbImage> images_;
  std::vector<LoadWarning> warnings_;
};

inline ImageFolder load_image_folder(const std::filesystem::path& dir) { return ImageFolder::load(dir); }

struct AugmentConfig {
  double rescale_factor = 1.1;
  double max_rotation_deg = 30.0;
  bool flip_horizontal = true;
  int crop_size = 128;
  double jitter_lo = 0.9;
  double jitter_hi = 1.1;

  void validate(int source_width, int source_height) const {
    if (!(rescale_factor >= 1.0)) throw ValidationError("augment: rescale_factor must be >= 1");
    if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0))
      throw ValidationError("augment: max_rotation_deg must be in [0, 180]");
    if (!(jitter_lo > 0.0 && jitter_lo <= jitter_hi))
      throw ValidationError("augment: rescale jitter must satisfy 0 < lo <= hi");
    if (crop_size <= 0) throw ValidationError("augment: crop_size must be positive");
    const double limit = rescale_factor * std::min(source_width, source_height);
    if (crop_size > limit + 1e-9)
      throw ValidationError("augment: crop_size " + std::to_string(crop_size) +
                            " exceeds the enlarged source size " + std::to_string(limit));
  }

  bool operator==(const AugmentConfig&) const = default;
};

/// Enlarge, maybe flip, rotate, rescale, crop; all draws come from `seed`.
/// Returns [3, crop, crop] in [-1, 1].
inline torch::Tensor augment(const RgbImage& image, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate(image.width, image.height);

  std::mt19937_64 gen(seed);
  const bool flip = std::bernoulli_distribution(0.5)(gen);
  const double angle =
      std::uniform_real_distribution<double>(-cfg.max_rotation_deg, cfg.max_rotation_deg)(gen);
  const double jitter = std::uniform_real_distribution<double>(cfg.jitter_lo, cfg.jitter_hi)(gen);

  cv::Mat m;
  to_mat(image).convertTo(m, CV_32FC3);

  auto resize_to = [&m](int w, int h) {
    if (w == m.cols && h == m.rows) return;
    cv::Mat out;
    cv::resize(m, out, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    m = out;
  };

  resize_to(static_cast<int>(std::lround(image.width * cfg.rescale_factor)),
            static_cast<int>(std::lround(image.height * cfg.rescale_factor)));

  if (cfg.flip_horizontal && flip) cv::flip(m, m, 1);

  if (angle != 0.0) {
    const cv::Point2f center((m.cols - 1) / 2.0f, (m.rows - 1) / 2.0f);
    const cv::Mat rot = cv::getRotationMatrix2D(center, angle, 1.0);
    cv::Mat out;
    cv::warpAffine(m, out, rot, m.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    m = out;
  }

  // The jittered size never drops below the crop.
  resize_to(std::max(cfg.crop_size, static_cast<int>(std::lround(m.cols * jitter))),
            std::max(cfg.crop_size, static_cast<int>(std::lround(m.rows * jitter))));

  const int ox = std::uniform_int_distribution<int>(0, m.cols - cfg.crop_size)(gen);
  const int oy = std::uniform_int_distribution<int>(0, m.rows - cfg.crop_size)(gen);
  cv::Mat crop = m(cv::Rect(ox, oy, cfg.crop_size, cfg.crop_size)).clone();

  auto t = torch::from_blob(crop.data, {cfg.crop_size, cfg.crop_size, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).div(127.5).sub(1.0).clamp(-1.0, 1.0).contiguous();
}

/// Seeded index stream. Each step yields a generator batch and a discriminator
/// batch with disjoint sample indices.
class BatchStream {
 public:
  struct Pair {
    std::uint64_t step = 0;
    std::vector<std::size_t> gen;
    std::vector<std::size_t> disc;
  };

  BatchStream(std::size_t dataset_size, int batch_size, std::uint64_t seed, int epoch_size = 1000)
      : size_(dataset_size), batch_(batch_size), seed_(seed), epoch_size_(epoch_size), rng_(seed) {
    if (batch_size <= 0) throw ValidationError("batch stream: batch size must be positive");
    if (epoch_size <= 0) throw ValidationError("batch stream: epoch size must be positive");
    const auto needed = 2 * static_cast<std::size_t>(batch_size);
    if (dataset_size < needed)
      throw ValidationError("batch stream: dataset has " + std::to_string(dataset_size) +
                            " images, needs at least " + std::to_string(needed) +
                            " (two disjoint batches of " + std::to_string(batch_size) + ")");
    order_.resize(size_);
    reshuffle();
  }

  Pair next_pair() {
    const auto b = static_cast<std::size_t>(batch_);
    if (cursor_ + 2 * b > order_.size()) reshuffle();
    Pair p;
    p.step = steps_;
    p.gen.assign(order_.begin() + cursor_, order_.begin() + cursor_ + b);
    p.disc.assign(order_.begin() + cursor_ + b, order_.begin() + cursor_ + 2 * b);
    cursor_ += 2 * b;
    ++steps_;
    return p;
  }

  /// Replays `n` draws; used to restore a stream from its step count.
  void skip(std::uint64_t n) {
    for (std::uint64_t i = 0; i < n; ++i) next_pair();
  }

  std::uint64_t steps() const { return steps_; }
  std::uint64_t epoch() const { return steps_ / static_cast<std::uint64_t>(epoch_size_); }
  int batch_size() const { return batch_; }
  int epoch_size() const { return epoch_size_; }
  std::uint64_t seed() const { return seed_; }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::size_t size_;
  int batch_;
  std::uint64_t seed_;
  int epoch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t steps_ = 0;
};

inline BatchStream::Pair next_pair(BatchStream& stream) { return stream.next_pair(); }

/// Per-sample augmentation seed; depends only on the stream seed, step, batch slot
/// (0 generator, 1 discriminator) and position.
inline std::uint64_t sample_seed(std::uint64_t stream_seed, std::uint64_t step, int slot, std::size_t k) {
  return substream_seed(stream_seed, step * 2 + static_cast<std::uint64_t>(slot), k);
}

/// [b, 3, crop, crop] batch of augmented samples.
inline torch::Tensor make_batch(const ImageFolder& folder, std::span<const std::size_t> indices,
                                const AugmentConfig& cfg, std::uint64_t stream_seed,
                                std::uint64_t step, int slot) {
  std::vector<torch::Tensor> items;
  items.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k)
    items.push_back(augment(folder.image(indices[k]), cfg, sample_seed(stream_seed, step, slot, k)));
  return torch::stack(items);
}

}  // namespace ganimorph::data
