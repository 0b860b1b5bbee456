#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "garden/image.hpp"
#include "json.hpp"

namespace garden {

/// Regenerates mask = 1 pixels of an S x S window (1 = regenerate).
using InpaintFn = std::function<ImageTensor(const ImageTensor& window, const std::vector<std::uint8_t>& mask,
                                            const std::string& prompt, std::uint64_t seed)>;

struct SceneSequence {
  std::vector<ImageTensor> images;        // n >= 2 square scenes of equal side S
  std::vector<std::string> seam_prompts;  // n - 1
  std::size_t gap_width = 0;              // 0 means S / 2
};

struct StitchGeometry {
  std::size_t side = 0;     // S
  std::size_t gap = 0;
  std::size_t margin = 0;   // min(S / 8, gap / 2) pixels into each neighbour
  std::size_t width = 0;    // n S + (n - 1) gap
  std::vector<std::size_t> scene_x;   // left edge of each scene in the strip
  std::vector<std::size_t> window_x;  // left edge of the S-wide inpaint window of each gap
};

/// Validates a sequence and lays it out. ConfigError when n < 2, sizes
/// differ, the prompt count is not n - 1, the gap is narrower than the
/// latent cell `cell`, S - gap is odd, or the masked band would leave less
/// than one latent cell of known pixels on either side of the window.
StitchGeometry stitch_geometry(const SceneSequence& seq, std::size_t cell);

/// Places scenes left to right with blank (mid-grey) gap bands, then fills
/// each gap in order with `inpaint` on an S-wide window centred on it. The
/// mask covers the gap plus `margin` columns into each neighbour, full
/// height. Only masked pixels are copied back, so everything outside every
/// mask is bit-identical to the source scenes.
ImageTensor stitch(const SceneSequence& seq, std::size_t cell, const InpaintFn& inpaint, std::uint64_t seed);

/// The same layout with gaps left blank: what `stitch` starts from.
ImageTensor layout_strip(const SceneSequence& seq, const StitchGeometry& geom);

/// Naive concatenation of the scenes without gaps, for seam comparisons.
ImageTensor abut_scenes(const std::vector<ImageTensor>& scenes);

/// Mean |I(x + 1) - I(x)| over all rows and channels for x0 <= x < x1 - 1.
double mean_horizontal_gradient(const ImageTensor& img, std::size_t x0, std::size_t x1);

struct EquirectOptions {
  double band_fraction = 0.5;  // share of the height the strip occupies, centred
  std::array<float, 3> sky{0.55f, 0.70f, 0.85f};      // [-1, 1] RGB
  std::array<float, 3> ground{-0.10f, -0.25f, -0.45f};
  double wrap_fraction = 0.02;  // width of the wrap-seam blend window
};

/// Resamples the strip (bilinear, pixel centres) into the central band of a
/// 2H x H canvas, fills above and below by extending the band's edge rows
/// toward flat sky / ground tones, and cross-fades the first and last
/// columns toward their mean so column 0 equals column W - 1.
/// ConfigError for odd or tiny heights, strips shorter than 8 rows, or a
/// band fraction outside (0, 1].
ImageTensor to_equirectangular(const ImageTensor& strip, std::size_t height, const EquirectOptions& options = {});

/// Largest per-channel |column 0 - column W-1| after 8-bit quantization, in
/// units of the [0, 1] range.
double wrap_error(const Rgb8Image& img);

/// Viewer-facing description of a panorama; yaw angles in [0, 360).
struct PanoramaMeta {
  std::vector<std::string> scenes;       // scene order
  std::vector<std::string> seam_prompts;
  std::vector<double> scene_yaws;        // centre of each scene
  std::vector<double> seam_yaws;         // centre of each gap
  double band_fraction = 0.5;
  std::uint64_t seed = 0;
  double initial_yaw = 0.0;
  double initial_pitch = 0.0;
  std::size_t width = 0;
  std::size_t height = 0;
};

PanoramaMeta panorama_meta(const StitchGeometry& geom, const std::vector<std::string>& scene_names,
                           const std::vector<std::string>& seam_prompts, const EquirectOptions& options,
                           std::uint64_t seed, std::size_t height);
nlohmann::json to_json(const PanoramaMeta& meta);

}  // namespace garden
