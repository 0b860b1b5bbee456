#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "garden/image.hpp"

namespace garden {

/// One image-caption pair in the `metadata.jsonl` shape.
struct DatasetRecord {
  std::string file_name;
  std::string caption;  // serialized as "additional_feature"
  bool has_architecture = false;

  bool operator==(const DatasetRecord&) const = default;
};

struct RawImageMeta {
  std::size_t width = 0;
  std::size_t height = 0;
  bool has_caption = false;
  bool has_architecture = false;
};

inline constexpr std::size_t kMinPixelCount = 6'000'000;

/// Accept when the pixel count reaches six million (inclusive), a caption
/// exists, and the image is curated as showing architecture. Rules are
/// checked in that order and the first failure is reported.
struct FilterDecision {
  bool accepted = false;
  std::string reason;  // "resolution" | "missing_caption" | "missing_architecture"
};
FilterDecision filter_record(const RawImageMeta& meta);

/// Center-crops to a square on the short side, then area-averages to side x side.
ImageTensor scale_image(const ImageTensor& img, std::size_t side);

/// Writes `{"file_name": ..., "additional_feature": ...}` per line, UTF-8, LF.
void write_manifest(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);
/// Inverse of write_manifest. Curation flags come back false; merge them
/// with read_curation. Throws ParseError (with 1-based line number) on
/// malformed lines and on duplicate file names.
std::vector<DatasetRecord> read_manifest(const std::filesystem::path& path);

/// Formats one manifest line without the trailing newline.
std::string manifest_line(const DatasetRecord& record);

void write_curation(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);
/// Copies has_architecture flags from `curation.jsonl` onto matching records.
void apply_curation(const std::filesystem::path& path, std::vector<DatasetRecord>& records);

/// Rejects empty file names and captions that are blank after trimming.
void validate_record(const DatasetRecord& record);

/// Seeded train/validation split; `validation_fraction` of the indices
/// (rounded, at least one when n >= 2) go to validation.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split split_indices(std::size_t n, double validation_fraction, std::uint64_t seed);

/// Outcome of ingesting a directory of real images.
struct IngestReport {
  std::vector<DatasetRecord> accepted;
  std::vector<std::pair<std::string, std::string>> rejected;  // file name, reason
};

/// Ingests every *.png in `source` (name order). Captions come from an
/// optional `captions.jsonl` there (`file_name` / `additional_feature`;
/// blank or missing means no caption) and curation flags from an optional
/// `curation.jsonl`. Each image is judged by filter_record on its header
/// size; accepted images are center-cropped and scaled to `side` and written
/// with metadata.jsonl, curation.jsonl and rejections.jsonl into `dest`.
/// Every input is read and judged before anything is written.
IngestReport ingest_directory(const std::filesystem::path& source, const std::filesystem::path& dest,
                              std::size_t side);

// ---------------------------------------------------------------- toy corpus

enum class Element { Pavilion, Bridge, Pond, Pine, Rock, Moon };
inline constexpr std::size_t kElementCount = 6;
const char* element_name(Element e);

enum class Side { Left, Right };

enum class Palette { Paper, Ink };

struct ElementPlacement {
  Element element;
  Side side;
};

/// Probability that each element (in Element order) appears in a scene.
struct ToySceneConfig {
  std::array<double, kElementCount> element_probability{0.6, 0.35, 0.5, 0.5, 0.4, 0.3};
  Palette palette = Palette::Paper;
};

struct ToyScene {
  std::vector<ElementPlacement> elements;  // Element order, each at most once
};

ToyScene sample_scene(std::uint64_t seed, std::size_t index, const ToySceneConfig& config);
std::string scene_caption(const ToyScene& scene);
Rgb8Image render_scene(const ToyScene& scene, std::size_t side, Palette palette);

struct ToySample {
  DatasetRecord record;
  ToyScene scene;
  Rgb8Image image;
};

/// n procedurally composed garden scenes; identical (n, seed, side, config)
/// give bit-identical output.
std::vector<ToySample> synth_toy_dataset(std::size_t n, std::uint64_t seed, std::size_t side,
                                         const ToySceneConfig& config = {});

/// Writes images plus metadata.jsonl and curation.jsonl into `root`.
void write_dataset(const std::filesystem::path& root, const std::vector<ToySample>& samples);

/// A dataset loaded into memory: records plus images scaled to `side`.
struct LoadedDataset {
  std::vector<DatasetRecord> records;
  std::vector<ImageTensor> images;
};
LoadedDataset load_dataset(const std::filesystem::path& root, std::size_t side);

}  // namespace garden
