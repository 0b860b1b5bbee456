#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "garden/tensor.hpp"

namespace garden {

/// 8-bit interleaved RGB raster as stored on disk.
struct Rgb8Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGBRGB...

  bool operator==(const Rgb8Image&) const = default;
};

/// Planar 3 x H x W image with values in [-1, 1].
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;  // channel-major

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, float fill = 0.f) : height(h), width(w), values(3 * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }

  template <typename T>
  Tensor<T> tensor() const {
    return Tensor<T>({3, height, width}, std::vector<T>(values.begin(), values.end()));
  }
  template <typename T>
  static ImageTensor from_tensor(const Tensor<T>& t);

  bool operator==(const ImageTensor&) const = default;
};

/// 0 -> -1, 255 -> +1, linear in between.
ImageTensor encode_rgb8(const Rgb8Image& img);
/// Clamps to [-1, 1] and rounds to the nearest 8-bit level.
Rgb8Image decode_rgb8(const ImageTensor& img);

void write_png(const std::filesystem::path& path, const Rgb8Image& img);
Rgb8Image read_png(const std::filesystem::path& path);
/// Width and height from the PNG header without decoding pixels.
std::pair<std::size_t, std::size_t> read_png_size(const std::filesystem::path& path);

/// Single-channel mask from a PNG: pixel is 1 when its first channel >= 128.
std::vector<std::uint8_t> read_mask_png(const std::filesystem::path& path, std::size_t& width,
                                        std::size_t& height);
void write_mask_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask,
                    std::size_t width, std::size_t height);

/// Concatenates equal-height images left to right.
ImageTensor tile_horizontal(const std::vector<ImageTensor>& images);

}  // namespace garden
