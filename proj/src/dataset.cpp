#include "garden/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "garden/errors.hpp"
#include "garden/random.hpp"
#include "json.hpp"

namespace garden {

using json = nlohmann::json;

FilterDecision filter_record(const RawImageMeta& meta) {
  if (meta.width * meta.height < kMinPixelCount) return {false, "resolution"};
  if (!meta.has_caption) return {false, "missing_caption"};
  if (!meta.has_architecture) return {false, "missing_architecture"};
  return {true, ""};
}

namespace {

// Area weights mapping `in` samples onto `out` samples: each output cell
// covers [o*in/out, (o+1)*in/out) of the input axis.
struct AxisWeights {
  std::vector<std::size_t> first;
  std::vector<std::vector<double>> weights;
};

AxisWeights area_weights(std::size_t in, std::size_t out) {
  AxisWeights aw;
  aw.first.resize(out);
  aw.weights.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double lo = static_cast<double>(o) * ratio;
    const double hi = static_cast<double>(o + 1) * ratio;
    const auto start = static_cast<std::size_t>(std::floor(lo));
    const auto stop = std::min(in, static_cast<std::size_t>(std::ceil(hi)));
    aw.first[o] = start;
    for (std::size_t i = start; i < stop; ++i) {
      const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
      aw.weights[o].push_back(overlap / ratio);
    }
  }
  return aw;
}

}  // namespace

ImageTensor scale_image(const ImageTensor& img, std::size_t side) {
  if (img.height < 2 || img.width < 2) {
    throw ConfigError("scale_image: degenerate input " + std::to_string(img.height) + "x" + std::to_string(img.width));
  }
  if (side < 8 || side % 2 != 0) throw ConfigError("scale_image: target side must be even and >= 8");
  const std::size_t m = std::min(img.height, img.width);
  const std::size_t y0 = (img.height - m) / 2;
  const std::size_t x0 = (img.width - m) / 2;
  if (m == side) {
    ImageTensor out(side, side);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
  }
  const AxisWeights aw = area_weights(m, side);
  // rows first, then columns
  std::vector<double> tmp(3 * side * m);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t oy = 0; oy < side; ++oy)
      for (std::size_t x = 0; x < m; ++x) {
        double s = 0;
        for (std::size_t i = 0; i < aw.weights[oy].size(); ++i)
          s += aw.weights[oy][i] * img.at(c, y0 + aw.first[oy] + i, x0 + x);
        tmp[(c * side + oy) * m + x] = s;
      }
  ImageTensor out(side, side);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t oy = 0; oy < side; ++oy)
      for (std::size_t ox = 0; ox < side; ++ox) {
        double s = 0;
        for (std::size_t i = 0; i < aw.weights[ox].size(); ++i)
          s += aw.weights[ox][i] * tmp[(c * side + oy) * m + aw.first[ox] + i];
        out.at(c, oy, ox) = std::clamp(static_cast<float>(s), -1.0f, 1.0f);
      }
  return out;
}

// ---------------------------------------------------------------- manifest

void validate_record(const DatasetRecord& record) {
  if (record.file_name.empty()) throw ParseError("record has an empty file_name");
  const auto blank = record.caption.find_first_not_of(" \t\r\n") == std::string::npos;
  if (blank) throw ParseError("record " + record.file_name + " has an empty caption");
}

std::string manifest_line(const DatasetRecord& record) {
  return "{\"file_name\": " + json(record.file_name).dump(-1, ' ', false) +
         ", \"additional_feature\": " + json(record.caption).dump(-1, ' ', false) + "}";
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.filename().string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!obj.is_object()) throw ParseError(path.filename().string() + " line " + std::to_string(lineno) + ": not an object");
    fn(obj, lineno);
  }
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records) {
    validate_record(r);
    if (!seen.insert(r.file_name).second) throw ParseError("duplicate file_name: " + r.file_name);
  }
  auto out = open_out(path);
  for (const auto& r : records) out << manifest_line(r) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<DatasetRecord> read_manifest(const std::filesystem::path& path) {
  std::vector<DatasetRecord> records;
  std::set<std::string> seen;
  for_each_json_line(path, [&](const json& obj, std::size_t lineno) {
    const auto where = "metadata line " + std::to_string(lineno);
    if (obj.size() != 2 || !obj.contains("file_name") || !obj.contains("additional_feature") ||
        !obj["file_name"].is_string() || !obj["additional_feature"].is_string()) {
      throw ParseError(where + ": expected exactly string keys file_name and additional_feature");
    }
    DatasetRecord r{obj["file_name"].get<std::string>(), obj["additional_feature"].get<std::string>(), false};
    try {
      validate_record(r);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!seen.insert(r.file_name).second) throw ParseError(where + ": duplicate file_name " + r.file_name);
    records.push_back(std::move(r));
  });
  return records;
}

void write_curation(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  auto out = open_out(path);
  for (const auto& r : records) {
    out << "{\"file_name\": " << json(r.file_name).dump(-1, ' ', false)
        << ", \"has_architecture\": " << (r.has_architecture ? "true" : "false") << "}\n";
  }
  if (!out) throw Error("write failed for " + path.string());
}

void apply_curation(const std::filesystem::path& path, std::vector<DatasetRecord>& records) {
  std::map<std::string, bool> flags;
  for_each_json_line(path, [&](const json& obj, std::size_t lineno) {
    if (!obj.contains("file_name") || !obj.contains("has_architecture") || !obj["has_architecture"].is_boolean()) {
      throw ParseError("curation line " + std::to_string(lineno) + ": expected file_name and boolean has_architecture");
    }
    flags[obj["file_name"].get<std::string>()] = obj["has_architecture"].get<bool>();
  });
  for (auto& r : records) {
    auto it = flags.find(r.file_name);
    if (it != flags.end()) r.has_architecture = it->second;
  }
}

IngestReport ingest_directory(const std::filesystem::path& source, const std::filesystem::path& dest,
                              std::size_t side) {
  if (side < 8 || side % 2 != 0) throw ConfigError("ingest: side must be even and >= 8");
  if (!std::filesystem::is_directory(source)) throw ConfigError("ingest: " + source.string() + " is not a directory");
  std::map<std::string, std::string> captions;
  if (std::filesystem::exists(source / "captions.jsonl")) {
    for_each_json_line(source / "captions.jsonl", [&](const json& obj, std::size_t lineno) {
      if (!obj.contains("file_name") || !obj["file_name"].is_string()) {
        throw ParseError("captions.jsonl line " + std::to_string(lineno) + ": missing file_name");
      }
      const auto caption = obj.value("additional_feature", json(nullptr));
      captions[obj["file_name"].get<std::string>()] = caption.is_string() ? caption.get<std::string>() : "";
    });
  }
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(source)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  std::vector<DatasetRecord> candidates;
  for (const auto& name : names) {
    DatasetRecord r;
    r.file_name = name;
    auto it = captions.find(name);
    if (it != captions.end()) r.caption = it->second;
    candidates.push_back(r);
  }
  if (std::filesystem::exists(source / "curation.jsonl")) apply_curation(source / "curation.jsonl", candidates);

  IngestReport report;
  for (const auto& r : candidates) {
    const auto [w, h] = read_png_size(source / r.file_name);
    RawImageMeta meta;
    meta.width = w;
    meta.height = h;
    meta.has_caption = r.caption.find_first_not_of(" \t\r\n") != std::string::npos;
    meta.has_architecture = r.has_architecture;
    const FilterDecision d = filter_record(meta);
    if (d.accepted) {
      report.accepted.push_back(r);
    } else {
      report.rejected.emplace_back(r.file_name, d.reason);
    }
  }

  std::filesystem::create_directories(dest);
  for (const auto& r : report.accepted) {
    write_png(dest / r.file_name, decode_rgb8(scale_image(encode_rgb8(read_png(source / r.file_name)), side)));
  }
  write_manifest(dest / "metadata.jsonl", report.accepted);
  write_curation(dest / "curation.jsonl", report.accepted);
  auto out = open_out(dest / "rejections.jsonl");
  for (const auto& [name, reason] : report.rejected) {
    out << "{\"file_name\": " << json(name).dump(-1, ' ', false) << ", \"reason\": \"" << reason << "\"}\n";
  }
  if (!out) throw Error("write failed for " + (dest / "rejections.jsonl").string());
  return report;
}

Split split_indices(std::size_t n, double validation_fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5eed));
  auto perm = rng.permutation(n);
  std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  if (n >= 2 && validation_fraction > 0) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  Split s;
  s.validation.assign(perm.begin(), perm.begin() + static_cast<long>(n_val));
  s.train.assign(perm.begin() + static_cast<long>(n_val), perm.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

// ---------------------------------------------------------------- toy corpus

const char* element_name(Element e) {
  switch (e) {
    case Element::Pavilion: return "pavilion";
    case Element::Bridge: return "bridge";
    case Element::Pond: return "pond";
    case Element::Pine: return "pine";
    case Element::Rock: return "rock";
    case Element::Moon: return "moon";
  }
  return "?";
}

ToyScene sample_scene(std::uint64_t seed, std::size_t index, const ToySceneConfig& config) {
  Rng rng(derive_seed(seed, index));
  ToyScene scene;
  for (std::size_t e = 0; e < kElementCount; ++e) {
    const bool present = rng.bernoulli(config.element_probability[e]);
    const Side side = rng.bernoulli(0.5) ? Side::Left : Side::Right;
    if (present) scene.elements.push_back({static_cast<Element>(e), side});
  }
  return scene;
}

std::string scene_caption(const ToyScene& scene) {
  if (scene.elements.empty()) return "an empty garden";
  std::string out = "a garden with ";
  for (std::size_t i = 0; i < scene.elements.size(); ++i) {
    if (i > 0) out += (i + 1 == scene.elements.size()) ? " and " : ", ";
    out += "a ";
    out += element_name(scene.elements[i].element);
    out += scene.elements[i].side == Side::Left ? " on the left" : " on the right";
  }
  return out;
}

namespace {

struct Rgb {
  double r, g, b;
};

struct PaletteColors {
  Rgb background, moon, pine, trunk, roof, body, rock, pond, bridge;
};

PaletteColors palette_colors(Palette p) {
  if (p == Palette::Ink) {
    // Pale strokes on dark indigo silk: far from the paper palette on purpose.
    return {{24, 28, 52},    {250, 246, 226}, {214, 218, 206}, {170, 172, 168}, {236, 236, 228},
            {150, 154, 160}, {196, 196, 190}, {96, 104, 136},  {224, 224, 216}};
  }
  return {{236, 222, 186}, {240, 196, 112}, {46, 92, 62},   {96, 64, 40},  {50, 55, 70},
          {158, 52, 40},   {112, 110, 104}, {96, 140, 164}, {176, 84, 48}};
}

// Colour of the topmost element covering (u, v), or nullopt for background.
std::optional<Rgb> shade(const ToyScene& scene, const PaletteColors& pc, double u, double v) {
  std::optional<Rgb> color;
  auto sq = [](double x) { return x * x; };
  for (Element kind : {Element::Moon, Element::Pine, Element::Pavilion, Element::Rock, Element::Pond, Element::Bridge}) {
    for (const auto& p : scene.elements) {
      if (p.element != kind) continue;
      const double cx = p.side == Side::Left ? 0.27 : 0.73;
      const double du = u - cx;
      switch (kind) {
        case Element::Moon:
          if (sq(du) + sq(v - 0.16) <= sq(0.08)) color = pc.moon;
          break;
        case Element::Pine:
          if (std::abs(du) <= 0.025 && v >= 0.45 && v <= 0.62) color = pc.trunk;
          if (v >= 0.12 && v <= 0.5 && std::abs(du) <= 0.14 * (v - 0.12) / 0.38) color = pc.pine;
          break;
        case Element::Pavilion:
          if (std::abs(du) <= 0.1 && v >= 0.42 && v <= 0.6) color = pc.body;
          if (v >= 0.3 && v <= 0.42 && std::abs(du) <= 0.17 * (v - 0.3) / 0.12) color = pc.roof;
          break;
        case Element::Rock:
          if (sq(du / 0.09) + sq((v - 0.62) / 0.11) <= 1.0) color = pc.rock;
          break;
        case Element::Pond:
          if (sq(du / 0.2) + sq((v - 0.82) / 0.09) <= 1.0) color = pc.pond;
          break;
        case Element::Bridge: {
          const double r2 = sq(du) + sq(v - 0.8);
          if (v <= 0.8 && r2 >= sq(0.13) && r2 <= sq(0.18)) color = pc.bridge;
          break;
        }
      }
    }
  }
  return color;
}

}  // namespace

Rgb8Image render_scene(const ToyScene& scene, std::size_t side, Palette palette) {
  const PaletteColors pc = palette_colors(palette);
  Rgb8Image img{side, side, std::vector<std::uint8_t>(side * side * 3)};
  // 2x2 supersampling
  constexpr double offsets[2] = {0.25, 0.75};
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      double acc[3] = {0, 0, 0};
      for (double oy : offsets)
        for (double ox : offsets) {
          const double u = (static_cast<double>(x) + ox) / static_cast<double>(side);
          const double v = (static_cast<double>(y) + oy) / static_cast<double>(side);
          const Rgb c = shade(scene, pc, u, v).value_or(pc.background);
          acc[0] += c.r;
          acc[1] += c.g;
          acc[2] += c.b;
        }
      for (std::size_t c = 0; c < 3; ++c) {
        img.pixels[(y * side + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(acc[c] / 4.0));
      }
    }
  return img;
}

std::vector<ToySample> synth_toy_dataset(std::size_t n, std::uint64_t seed, std::size_t side,
                                         const ToySceneConfig& config) {
  if (n == 0) throw ConfigError("synth_toy_dataset: n must be >= 1");
  if (side < 8 || side % 2 != 0) throw ConfigError("synth_toy_dataset: side must be even and >= 8");
  std::vector<ToySample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    s.scene = sample_scene(seed, i, config);
    char name[32];
    std::snprintf(name, sizeof(name), "garden_%06zu.png", i);
    s.record.file_name = name;
    s.record.caption = scene_caption(s.scene);
    s.record.has_architecture = std::any_of(s.scene.elements.begin(), s.scene.elements.end(), [](const auto& p) {
      return p.element == Element::Pavilion || p.element == Element::Bridge;
    });
    s.image = render_scene(s.scene, side, config.palette);
  }
  return out;
}

void write_dataset(const std::filesystem::path& root, const std::vector<ToySample>& samples) {
  std::filesystem::create_directories(root);
  std::vector<DatasetRecord> records;
  records.reserve(samples.size());
  for (const auto& s : samples) {
    write_png(root / s.record.file_name, s.image);
    records.push_back(s.record);
  }
  write_manifest(root / "metadata.jsonl", records);
  write_curation(root / "curation.jsonl", records);
}

LoadedDataset load_dataset(const std::filesystem::path& root, std::size_t side) {
  LoadedDataset ds;
  ds.records = read_manifest(root / "metadata.jsonl");
  if (std::filesystem::exists(root / "curation.jsonl")) apply_curation(root / "curation.jsonl", ds.records);
  ds.images.reserve(ds.records.size());
  for (const auto& r : ds.records) {
    ds.images.push_back(scale_image(encode_rgb8(read_png(root / r.file_name)), side));
  }
  return ds;
}

}  // namespace garden
