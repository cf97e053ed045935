#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "htrlab/autodiff/tensor.hpp"

namespace htrlab::data {

/// Grayscale image, row-major, 1.0 is paper white and 0.0 full ink.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::int64_t h, std::int64_t w, double fill = 1.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h * w), fill) {}

  double& at(std::int64_t r, std::int64_t c) { return pixels[static_cast<std::size_t>(r * width + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return pixels[static_cast<std::size_t>(r * width + c)]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// 2x2 box average; odd trailing rows/columns are dropped.
Image downscale_half(const Image& img);

/// Rounds every pixel to the nearest multiple of 1/255.
void quantize8(Image& img);

/// 8-bit grayscale PNG via libpng. Values are rounded to k/255 on write.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Stacks equally sized images into [N,1,H,W] model input with ink mapped
/// to high values (1 - pixel).
ad::Tensor to_input(const std::vector<const Image*>& images);

}  // namespace htrlab::data
