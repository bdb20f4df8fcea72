#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "error.hpp"

namespace ganimorph {

/// 8-bit interleaved RGB image, row-major, value semantics.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }

  bool operator==(const RgbImage&) const = default;
};

inline cv::Mat to_mat(const RgbImage& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  std::copy(img.pixels.begin(), img.pixels.end(), m.data);
  return m;
}

inline RgbImage from_mat(const cv::Mat& m) {
  if (m.type() != CV_8UC3) throw ValidationError("expected an 8-bit 3-channel image");
  RgbImage img(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    std::copy(row, row + m.cols * 3, img.at(0, y));
  }
  return img;
}

/// Writes a lossless PNG. OpenCV stores BGR, so channels are swapped on the way out.
inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  cv::Mat bgr;
  cv::cvtColor(to_mat(img), bgr, cv::COLOR_RGB2BGR);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 6});
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write image: " + path.string());
}

/// Decodes any format OpenCV understands. Returns an empty image on decode failure.
inline RgbImage read_image(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    return {};
  }
  if (bgr.empty()) return {};
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat(rgb);
}

/// [3, H, W] float tensor in [-1, 1].
inline torch::Tensor to_tensor(const RgbImage& img) {
  auto t = torch::empty({img.height, img.width, 3}, torch::kUInt8);
  std::copy(img.pixels.begin(), img.pixels.end(), t.data_ptr<std::uint8_t>());
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

/// Inverse of to_tensor; values are clamped to [-1, 1] and rounded to the nearest level.
inline RgbImage to_image(const torch::Tensor& chw) {
  TORCH_CHECK(chw.dim() == 3 && chw.size(0) == 3, "expected a [3, H, W] tensor");
  auto q = chw.detach()
               .to(torch::kCPU, torch::kFloat32)
               .clamp(-1.0, 1.0)
               .add(1.0)
               .mul(127.5)
               .round()
               .to(torch::kUInt8)
               .permute({1, 2, 0})
               .contiguous();
  RgbImage img(static_cast<int>(chw.size(2)), static_cast<int>(chw.size(1)));
  std::copy(q.data_ptr<std::uint8_t>(), q.data_ptr<std::uint8_t>() + img.pixels.size(),
            img.pixels.begin());
  return img;
}

inline torch::Tensor stack_images(std::span<const RgbImage> images) {
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const auto& im : images) ts.push_back(to_tensor(im));
  return torch::stack(ts);
}

/// Tiles equally sized images into a rows x cols grid (row-major order).
inline RgbImage tile_grid(std::span<const RgbImage> images, int cols) {
  if (images.empty() || cols <= 0) return {};
  const int w = images.front().width;
  const int h = images.front().height;
  const int rows = static_cast<int>((images.size() + cols - 1) / cols);
  RgbImage grid(w * cols, h * rows);
  std::fill(grid.pixels.begin(), grid.pixels.end(), std::uint8_t{255});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.width != w || im.height != h) throw ShapeError("grid tiles must share one size");
    const int ox = static_cast<int>(i % cols) * w;
    const int oy = static_cast<int>(i / cols) * h;
    for (int y = 0; y < h; ++y) std::copy(im.at(0, y), im.at(0, y) + w * 3, grid.at(ox, oy + y));
  }
  return grid;
}

}  // namespace ganimorph
