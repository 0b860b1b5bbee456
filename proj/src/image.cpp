#include "garden/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "garden/errors.hpp"

namespace garden {

template <typename T>
ImageTensor ImageTensor::from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw DimensionError("image tensor must be 3 x H x W, got " + shape_str(t.shape()));
  ImageTensor img(t.dim(1), t.dim(2));
  for (std::size_t i = 0; i < t.size(); ++i) img.values[i] = static_cast<float>(t[i]);
  return img;
}
template ImageTensor ImageTensor::from_tensor(const Tensor<float>&);
template ImageTensor ImageTensor::from_tensor(const Tensor<double>&);

ImageTensor encode_rgb8(const Rgb8Image& img) {
  ImageTensor out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<float>(img.pixels[(y * img.width + x) * 3 + c]) / 127.5f - 1.0f;
  return out;
}

Rgb8Image decode_rgb8(const ImageTensor& img) {
  Rgb8Image out{img.width, img.height, std::vector<std::uint8_t>(img.width * img.height * 3)};
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), -1.0f, 1.0f);
        out.pixels[(y * img.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround((v + 1.0f) * 127.5f));
      }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const Rgb8Image& img) {
  if (img.pixels.size() != img.width * img.height * 3 || img.width == 0 || img.height == 0) {
    throw DimensionError("write_png: inconsistent image buffer");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png encoding failed for " + path.string());
  }
  {
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
      png_write_row(png, img.pixels.data() + y * img.width * 3);
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) throw Error("write failed for " + path.string());
}

std::pair<std::size_t, std::size_t> read_png_size(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  std::pair<std::size_t, std::size_t> size;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("malformed png: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  size = {png_get_image_width(png, info), png_get_image_height(png, info)};
  png_destroy_read_struct(&png, &info, nullptr);
  return size;
}

Rgb8Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  Rgb8Image out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("malformed png: " + path.string());
  }
  {
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.width = png_get_image_width(png, info);
    out.height = png_get_image_height(png, info);
    out.pixels.resize(out.width * out.height * 3);
    for (std::size_t y = 0; y < out.height; ++y) png_read_row(png, out.pixels.data() + y * out.width * 3, nullptr);
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

std::vector<std::uint8_t> read_mask_png(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  const Rgb8Image img = read_png(path);
  width = img.width;
  height = img.height;
  std::vector<std::uint8_t> mask(width * height);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = img.pixels[i * 3] >= 128 ? 1 : 0;
  return mask;
}

void write_mask_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, std::size_t width,
                    std::size_t height) {
  Rgb8Image img{width, height, std::vector<std::uint8_t>(width * height * 3)};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const std::uint8_t v = mask[i] ? 255 : 0;
    img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = v;
  }
  write_png(path, img);
}

ImageTensor tile_horizontal(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw DimensionError("tile_horizontal: no images");
  const std::size_t h = images[0].height;
  std::size_t w = 0;
  for (const auto& im : images) {
    if (im.height != h) throw DimensionError("tile_horizontal: mixed heights");
    w += im.width;
  }
  ImageTensor out(h, w);
  std::size_t x0 = 0;
  for (const auto& im : images) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < im.width; ++x) out.at(c, y, x0 + x) = im.at(c, y, x);
    x0 += im.width;
  }
  return out;
}

}  // namespace garden
