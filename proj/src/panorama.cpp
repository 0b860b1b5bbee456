#include "garden/panorama.hpp"

#include <algorithm>
#include <cmath>

#include "garden/errors.hpp"
#include "garden/random.hpp"

namespace garden {

using nlohmann::json;

StitchGeometry stitch_geometry(const SceneSequence& seq, std::size_t cell) {
  const std::size_t n = seq.images.size();
  if (n < 2) throw ConfigError("panorama: need at least 2 scenes, got " + std::to_string(n));
  const std::size_t side = seq.images[0].height;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& img = seq.images[i];
    if (img.height != side || img.width != side) {
      throw ConfigError("panorama: scene " + std::to_string(i) + " is " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", expected " + std::to_string(side) + "x" +
                        std::to_string(side));
    }
  }
  if (seq.seam_prompts.size() != n - 1) {
    throw ConfigError("panorama: " + std::to_string(n) + " scenes need " + std::to_string(n - 1) +
                      " seam prompts, got " + std::to_string(seq.seam_prompts.size()));
  }
  StitchGeometry g;
  g.side = side;
  g.gap = seq.gap_width == 0 ? side / 2 : seq.gap_width;
  if (cell == 0 || g.gap < cell) {
    throw ConfigError("panorama: gap width " + std::to_string(g.gap) + " is narrower than the latent cell " +
                      std::to_string(cell));
  }
  if (g.gap > side || (side - g.gap) % 2 != 0) {
    throw ConfigError("panorama: gap width " + std::to_string(g.gap) + " must be at most S = " +
                      std::to_string(side) + " with S - gap even");
  }
  g.margin = std::min(side / 8, g.gap / 2);
  const std::size_t known = (side - g.gap) / 2;  // window columns on each side of the gap
  if (known < g.margin + cell) {
    throw ConfigError("panorama: gap width " + std::to_string(g.gap) +
                      " leaves no known latent column beside the seam mask");
  }
  g.width = n * side + (n - 1) * g.gap;
  for (std::size_t i = 0; i < n; ++i) g.scene_x.push_back(i * (side + g.gap));
  for (std::size_t i = 0; i + 1 < n; ++i) g.window_x.push_back(g.scene_x[i] + side - known);
  return g;
}

ImageTensor layout_strip(const SceneSequence& seq, const StitchGeometry& g) {
  ImageTensor strip(g.side, g.width, 0.f);
  for (std::size_t i = 0; i < seq.images.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < g.side; ++y)
        for (std::size_t x = 0; x < g.side; ++x) strip.at(c, y, g.scene_x[i] + x) = seq.images[i].at(c, y, x);
  }
  return strip;
}

ImageTensor stitch(const SceneSequence& seq, std::size_t cell, const InpaintFn& inpaint, std::uint64_t seed) {
  const StitchGeometry g = stitch_geometry(seq, cell);
  ImageTensor strip = layout_strip(seq, g);
  const std::size_t known = (g.side - g.gap) / 2;
  std::vector<std::uint8_t> mask(g.side * g.side, 0);
  for (std::size_t y = 0; y < g.side; ++y)
    for (std::size_t x = known - g.margin; x < known + g.gap + g.margin; ++x) mask[y * g.side + x] = 1;

  for (std::size_t k = 0; k < g.window_x.size(); ++k) {
    const std::size_t x0 = g.window_x[k];
    ImageTensor window(g.side, g.side);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < g.side; ++y)
        for (std::size_t x = 0; x < g.side; ++x) window.at(c, y, x) = strip.at(c, y, x0 + x);
    const ImageTensor filled = inpaint(window, mask, seq.seam_prompts[k], derive_seed(seed, k));
    if (filled.height != g.side || filled.width != g.side) {
      throw DimensionError("panorama: inpaint returned a " + std::to_string(filled.width) + "x" +
                           std::to_string(filled.height) + " window");
    }
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < g.side; ++y)
        for (std::size_t x = 0; x < g.side; ++x)
          if (mask[y * g.side + x]) strip.at(c, y, x0 + x) = filled.at(c, y, x);
  }
  return strip;
}

ImageTensor abut_scenes(const std::vector<ImageTensor>& scenes) { return tile_horizontal(scenes); }

double mean_horizontal_gradient(const ImageTensor& img, std::size_t x0, std::size_t x1) {
  if (x1 > img.width || x0 + 1 >= x1) throw DimensionError("mean_horizontal_gradient: bad column range");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = x0; x + 1 < x1; ++x) {
        sum += std::abs(static_cast<double>(img.at(c, y, x + 1)) - img.at(c, y, x));
        ++count;
      }
  return sum / static_cast<double>(count);
}

namespace {

float bilinear(const ImageTensor& img, std::size_t c, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  const double top = (1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1);
  const double bottom = (1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

}  // namespace

ImageTensor to_equirectangular(const ImageTensor& strip, std::size_t height, const EquirectOptions& o) {
  if (height < 8 || height % 2 != 0) {
    throw ConfigError("panorama: output height must be even and >= 8, got " + std::to_string(height));
  }
  if (strip.height < 8) throw ConfigError("panorama: strip height must be >= 8, got " + std::to_string(strip.height));
  if (!(o.band_fraction > 0.0 && o.band_fraction <= 1.0)) throw ConfigError("panorama: band_fraction must be in (0, 1]");
  if (!(o.wrap_fraction > 0.0 && o.wrap_fraction <= 0.5)) throw ConfigError("panorama: wrap_fraction must be in (0, 0.5]");
  const std::size_t width = 2 * height;
  const std::size_t band = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(o.band_fraction * height)));
  const std::size_t top = (height - band) / 2;
  const std::size_t below = height - top - band;
  ImageTensor out(height, width);

  const double sy_scale = static_cast<double>(strip.height) / static_cast<double>(band);
  const double sx_scale = static_cast<double>(strip.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < band; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        out.at(c, top + y, x) = bilinear(strip, c, (static_cast<double>(y) + 0.5) * sy_scale - 0.5,
                                         (static_cast<double>(x) + 0.5) * sx_scale - 0.5);
      }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t x = 0; x < width; ++x) {
      const float edge_top = out.at(c, top, x);
      const float edge_bottom = out.at(c, top + band - 1, x);
      for (std::size_t y = 0; y < top; ++y) {
        const double t = static_cast<double>(top - y) / static_cast<double>(top);
        out.at(c, y, x) = static_cast<float>((1 - t) * edge_top + t * o.sky[c]);
      }
      for (std::size_t d = 1; d <= below; ++d) {
        const double t = static_cast<double>(d) / static_cast<double>(below);
        out.at(c, top + band - 1 + d, x) = static_cast<float>((1 - t) * edge_bottom + t * o.ground[c]);
      }
    }

  // Cross-fade both ends toward their shared mean; at the seam itself the
  // weight is exactly 1, so column 0 and column W-1 are equal.
  const std::size_t window =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(o.wrap_fraction * width)), 2, width / 2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y) {
      const float m = 0.5f * (out.at(c, y, 0) + out.at(c, y, width - 1));
      for (std::size_t i = 0; i < window; ++i) {
        const float a = 1.f - static_cast<float>(i) / static_cast<float>(window);
        float& left = out.at(c, y, i);
        float& right = out.at(c, y, width - 1 - i);
        left = (1.f - a) * left + a * m;
        right = (1.f - a) * right + a * m;
      }
    }
  return out;
}

double wrap_error(const Rgb8Image& img) {
  if (img.width < 2) throw DimensionError("wrap_error: image narrower than 2 columns");
  int worst = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t c = 0; c < 3; ++c) {
      const int a = img.pixels[(y * img.width) * 3 + c];
      const int b = img.pixels[(y * img.width + img.width - 1) * 3 + c];
      worst = std::max(worst, std::abs(a - b));
    }
  return worst / 255.0;
}

PanoramaMeta panorama_meta(const StitchGeometry& g, const std::vector<std::string>& scene_names,
                           const std::vector<std::string>& seam_prompts, const EquirectOptions& options,
                           std::uint64_t seed, std::size_t height) {
  if (scene_names.size() != g.scene_x.size()) throw DimensionError("panorama_meta: scene name count mismatch");
  PanoramaMeta m;
  m.scenes = scene_names;
  m.seam_prompts = seam_prompts;
  auto yaw = [&](double x) { return std::fmod(360.0 * x / static_cast<double>(g.width), 360.0); };
  for (std::size_t x : g.scene_x) m.scene_yaws.push_back(yaw(static_cast<double>(x) + 0.5 * static_cast<double>(g.side)));
  for (std::size_t i = 0; i + 1 < g.scene_x.size(); ++i) {
    m.seam_yaws.push_back(yaw(static_cast<double>(g.scene_x[i] + g.side) + 0.5 * static_cast<double>(g.gap)));
  }
  m.band_fraction = options.band_fraction;
  m.seed = seed;
  m.initial_yaw = m.scene_yaws.front();
  m.initial_pitch = 0.0;
  m.width = 2 * height;
  m.height = height;
  return m;
}

nlohmann::json to_json(const PanoramaMeta& m) {
  json scenes = json::array();
  for (std::size_t i = 0; i < m.scenes.size(); ++i) {
    scenes.push_back({{"index", i}, {"name", m.scenes[i]}, {"yaw", m.scene_yaws[i]}});
  }
  json seams = json::array();
  for (std::size_t i = 0; i < m.seam_yaws.size(); ++i) {
    seams.push_back({{"index", i}, {"prompt", m.seam_prompts[i]}, {"yaw", m.seam_yaws[i]}});
  }
  return {{"image", "panorama.png"},
          {"width", m.width},
          {"height", m.height},
          {"scenes", scenes},
          {"seams", seams},
          {"vertical_band_fraction", m.band_fraction},
          {"seed", m.seed},
          {"initial_view", {{"yaw", m.initial_yaw}, {"pitch", m.initial_pitch}}}};
}

}  // namespace garden
