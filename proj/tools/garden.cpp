// garden: command-line front end for the toy garden diffusion pipeline.
//
// Every artifact-producing command validates its inputs, then writes a run
// manifest (JSON) recording the command line, the fully resolved
// configuration, the seed, hashes of the inputs, the output paths and the
// tool version, and only then produces its outputs.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "garden/dataset.hpp"
#include "garden/diffusion.hpp"
#include "garden/errors.hpp"
#include "garden/evaluator.hpp"
#include "garden/panorama.hpp"
#include "garden/trainer.hpp"
#include "json.hpp"

using namespace garden;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

/// What a command is about to do, written as `<name>.run.json` before any
/// output exists. Holds nothing time-dependent, so identical runs write
/// identical manifests.
class RunManifest {
 public:
  RunManifest(std::string command, int argc, char** argv) {
    doc_["command"] = std::move(command);
    doc_["argv"] = std::vector<std::string>(argv, argv + argc);
    doc_["tool_version"] = GARDEN_VERSION;
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
  }

  void set(const std::string& key, json value) { doc_[key] = std::move(value); }

  void input(const fs::path& p) {
    if (fs::is_directory(p)) {
      json files = json::object();
      std::vector<fs::path> entries;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file()) entries.push_back(e.path());
      std::sort(entries.begin(), entries.end());
      for (const auto& e : entries) files[e.filename().string()] = file_digest(e);
      doc_["inputs"][p.string()] = std::move(files);
    } else {
      doc_["inputs"][p.string()] = file_digest(p);
    }
  }

  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }

  void write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write run manifest " + path.string());
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Non-empty lines of a text file.
std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path.string());
}

fs::path sibling_manifest(const fs::path& output) {
  return output.parent_path() / (output.stem().string() + ".run.json");
}

/// Loads a diffusion or lora-stage checkpoint and optionally attaches a
/// standalone adapter file.
LoadedModel load_model(const std::string& checkpoint, const std::string& adapters) {
  require_file(checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.stage != "diffusion" && ckpt.stage != "lora") {
    throw ConfigError(checkpoint + " is a " + ckpt.stage + " checkpoint; sampling needs a diffusion or lora one");
  }
  LoadedModel loaded = model_from_checkpoint(ckpt);
  if (!adapters.empty()) {
    require_file(adapters, "adapter file");
    if (!loaded.lora.adapters.empty()) throw ConfigError(checkpoint + " already carries adapters");
    loaded.lora = apply_adapters(loaded.model->registry, load_adapter_file(adapters));
  }
  return loaded;
}

struct SampleArgs {
  std::string checkpoint;
  std::string adapters;
  std::string prompt;
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  std::string sampler = "pndm";
  double guidance = 1.0;
};

void add_model_options(CLI::App* cmd, SampleArgs& a) {
  cmd->add_option("--ckpt", a.checkpoint, "Diffusion or lora-stage checkpoint")->required();
  cmd->add_option("--adapter", a.adapters, "Standalone adapter file to attach");
  cmd->add_option("--steps", a.steps, "Sampling steps")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Noise seed")->capture_default_str();
  cmd->add_option("--sampler", a.sampler, "pndm or ddpm")->capture_default_str();
  cmd->add_option("--guidance", a.guidance, "Classifier-free guidance scale (1 = off)")->capture_default_str();
}

SampleOptions sample_options(const SampleArgs& a) {
  SampleOptions o;
  o.steps = a.steps;
  o.seed = a.seed;
  o.sampler = parse_sampler(a.sampler);
  o.guidance_scale = a.guidance;
  if (o.steps == 0) throw ConfigError("--steps must be >= 1");
  return o;
}

json sample_config_json(const SampleArgs& a) {
  return {{"ckpt", a.checkpoint}, {"adapter", a.adapters}, {"prompt", a.prompt}, {"steps", a.steps},
          {"seed", a.seed},       {"sampler", a.sampler},  {"guidance", a.guidance}};
}

void note_model_inputs(RunManifest& m, const SampleArgs& a) {
  m.input(a.checkpoint);
  if (!a.adapters.empty()) m.input(a.adapters);
}

/// *.png files of a directory in name order.
std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

ImageTensor load_square(const fs::path& path, std::size_t side) {
  return scale_image(encode_rgb8(read_png(path)), side);
}

// ------------------------------------------------------------------ commands

struct PrepareArgs {
  std::string root;
  std::size_t synth = 64;
  std::size_t side = 32;
  std::uint64_t seed = 0;
  std::string palette = "paper";
  std::string ingest;
};

void run_prepare(const PrepareArgs& a, int argc, char** argv) {
  Palette palette = Palette::Paper;
  if (a.palette == "ink") palette = Palette::Ink;
  else if (a.palette != "paper") throw ConfigError("unknown palette '" + a.palette + "' (expected paper or ink)");
  if (a.side < 8 || a.side % 2 != 0) throw ConfigError("prepare-data: --side must be even and >= 8");
  if (a.ingest.empty() && a.synth == 0) throw ConfigError("prepare-data: --synth must be >= 1");
  if (!a.ingest.empty() && !fs::is_directory(a.ingest)) throw ConfigError("ingest source not found: " + a.ingest);

  const fs::path root(a.root);
  RunManifest m("prepare-data", argc, argv);
  if (a.ingest.empty()) {
    m.set("config", {{"mode", "synth"}, {"count", a.synth}, {"side", a.side}, {"palette", a.palette}});
  } else {
    m.set("config", {{"mode", "ingest"}, {"source", a.ingest}, {"side", a.side}});
    m.input(a.ingest);
  }
  m.set("seed", a.seed);
  m.output(root / "metadata.jsonl");
  m.output(root / "curation.jsonl");
  if (!a.ingest.empty()) m.output(root / "rejections.jsonl");
  m.write(root / "prepare-data.run.json");

  if (a.ingest.empty()) {
    ToySceneConfig scene;
    scene.palette = palette;
    write_dataset(root, synth_toy_dataset(a.synth, a.seed, a.side, scene));
    std::cout << "wrote " << a.synth << " images to " << root.string() << '\n';
  } else {
    const IngestReport r = ingest_directory(a.ingest, root, a.side);
    std::cout << "ingested " << r.accepted.size() << " images, rejected " << r.rejected.size() << '\n';
  }
}

struct TrainArgs {
  std::string stage;
  std::string config;
  std::string out;
  std::string resume;
  std::string init;
  std::vector<std::string> data;
  std::vector<std::string> lora_targets;
  std::vector<std::string> sets;
  std::size_t stop_after = 0;
  bool verbose = false;
};

void apply_set(const std::string& s, TrainConfig& cfg) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
  json value;
  try {
    value = json::parse(s.substr(eq + 1));
  } catch (const json::exception&) {
    value = s.substr(eq + 1);  // bare strings need no quotes
  }
  merge_json(json{{s.substr(0, eq), value}}, cfg);
}

void run_train(const TrainArgs& a, int argc, char** argv) {
  // File values first, then flags.
  TrainConfig requested;
  if (!a.config.empty()) merge_json(read_json_file(a.config), requested);
  requested.stage = parse_stage(a.stage);
  for (const auto& s : a.sets) apply_set(s, requested);
  if (!a.init.empty()) requested.init = a.init;
  if (!a.data.empty()) requested.data = a.data;
  if (!a.lora_targets.empty()) requested.lora_targets = a.lora_targets;

  TrainRunOptions run;
  if (!a.resume.empty()) {
    require_file(a.resume, "resume checkpoint");
    run.resume = a.resume;
  }
  if (a.stop_after > 0) run.stop_after = a.stop_after;
  run.verbose = a.verbose;

  if (!requested.init.empty()) require_file(requested.init, "init checkpoint");
  const TrainConfig cfg = resolve_config(requested);
  for (const auto& d : cfg.data) require_file(fs::path(d) / "metadata.jsonl", "dataset manifest");
  const std::vector<fs::path> outputs = planned_outputs(cfg, a.out, run);

  RunManifest m("train", argc, argv);
  m.set("config", to_json(cfg));
  m.set("seed", cfg.seed);
  m.set("resume", a.resume);
  m.set("stop_after", a.stop_after);
  if (!a.config.empty()) m.input(a.config);
  if (!cfg.init.empty()) m.input(cfg.init);
  if (!a.resume.empty()) m.input(a.resume);
  for (const auto& d : cfg.data) m.input(d);
  for (const auto& p : outputs) m.output(p);
  m.write(fs::path(a.out) / "train.run.json");

  const TrainResult r = train(cfg, a.out, run);
  if (r.lora_report) {
    std::cout << "LoRA trainable parameters: " << r.lora_report->theta_count << " of "
              << r.lora_report->theta_count + r.lora_report->phi0_count << " (ratio " << r.lora_report->ratio << ")\n";
  }
  std::cout << "trained " << stage_name(cfg.stage) << " to step " << r.final_step << "; checkpoint "
            << r.final_checkpoint.string() << '\n';
}

void run_sample(const SampleArgs& a, const std::string& out, int argc, char** argv) {
  const SampleOptions opts = sample_options(a);
  const LoadedModel loaded = load_model(a.checkpoint, a.adapters);

  RunManifest m("sample", argc, argv);
  m.set("config", sample_config_json(a));
  m.set("seed", a.seed);
  note_model_inputs(m, a);
  m.output(out);
  m.write(sibling_manifest(out));

  const ImageTensor img = sample(*loaded.model, schedule_for(loaded.model->config), a.prompt, opts);
  write_png(out, decode_rgb8(img));
  std::cout << "wrote " << out << '\n';
}

void run_inpaint(const SampleArgs& a, const std::string& image, const std::string& mask_path, const std::string& out,
                 int argc, char** argv) {
  const SampleOptions opts = sample_options(a);
  const LoadedModel loaded = load_model(a.checkpoint, a.adapters);
  const std::size_t side = loaded.model->config.image_side;
  require_file(image, "image");
  require_file(mask_path, "mask");
  const Rgb8Image src = read_png(image);
  if (src.width != side || src.height != side) {
    throw ConfigError("inpaint: image is " + std::to_string(src.width) + "x" + std::to_string(src.height) +
                      ", the model needs " + std::to_string(side) + "x" + std::to_string(side));
  }
  std::size_t mw = 0, mh = 0;
  const auto mask = read_mask_png(mask_path, mw, mh);
  if (mw != side || mh != side) throw ConfigError("inpaint: mask size differs from the image");

  RunManifest m("inpaint", argc, argv);
  json cfg = sample_config_json(a);
  cfg["image"] = image;
  cfg["mask"] = mask_path;
  m.set("config", cfg);
  m.set("seed", a.seed);
  note_model_inputs(m, a);
  m.input(image);
  m.input(mask_path);
  m.output(out);
  m.write(sibling_manifest(out));

  const ImageTensor result =
      inpaint(*loaded.model, schedule_for(loaded.model->config), encode_rgb8(src), mask, a.prompt, opts);
  write_png(out, decode_rgb8(result));
  std::cout << "wrote " << out << '\n';
}

struct EvaluateArgs {
  std::string encoder;
  std::string images;
  std::string prompts;
  std::string refs;
  std::string out;
};

void run_evaluate(const EvaluateArgs& a, int argc, char** argv) {
  require_file(a.encoder, "encoder");
  const auto encoder = load_evaluator(a.encoder);
  const std::size_t side = encoder->config.image_side;
  const auto files = png_files(a.images);
  if (files.empty()) throw ConfigError("evaluate: no .png files in " + a.images);
  std::vector<std::string> prompts = read_lines(a.prompts);
  if (prompts.size() == 1) prompts.resize(files.size(), prompts.front());
  if (prompts.size() != files.size()) {
    throw ConfigError("evaluate: " + std::to_string(prompts.size()) + " prompts for " + std::to_string(files.size()) +
                      " images (give one per image, in file-name order, or a single shared one)");
  }
  std::vector<fs::path> ref_files;
  if (!a.refs.empty()) {
    for (const auto& f : files) {
      ref_files.push_back(fs::path(a.refs) / f.filename());
      require_file(ref_files.back(), "reference image");
    }
  }

  RunManifest m("evaluate", argc, argv);
  m.set("config", {{"encoder", a.encoder}, {"images", a.images}, {"prompts", a.prompts}, {"refs", a.refs}});
  m.set("seed", 0);
  m.input(a.encoder);
  m.input(a.images);
  m.input(a.prompts);
  if (!a.refs.empty()) m.input(a.refs);
  m.output(a.out);
  m.write(sibling_manifest(a.out));

  std::vector<ImageTensor> images, refs;
  std::vector<std::string> ids;
  for (const auto& f : files) {
    images.push_back(load_square(f, side));
    ids.push_back(f.filename().string());
  }
  for (const auto& f : ref_files) refs.push_back(load_square(f, side));
  const SimilarityReport report = evaluate(*encoder, images, ids, prompts, a.refs.empty() ? nullptr : &refs);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + a.out);
  out << to_json(report).dump(2) << '\n';
  std::cout << "mean text-image cosine " << report.text_image.mean << " over " << images.size() << " images\n";
}

struct EvaluatorArgs {
  std::vector<std::string> data;
  std::string config;
  std::string out;
  EvaluatorTrainConfig train;
  std::size_t distractors = 8;
};

void run_train_evaluator(EvaluatorArgs a, int argc, char** argv) {
  EvaluatorConfig cfg;
  if (!a.config.empty()) merge_json(read_json_file(a.config), cfg);
  cfg.validate();
  if (a.train.steps == 0 || a.train.batch_size < 2) throw ConfigError("train-evaluator: need steps >= 1, batch >= 2");
  if (!(a.train.validation_fraction > 0.0 && a.train.validation_fraction < 1.0)) {
    throw ConfigError("train-evaluator: --validation-fraction must be in (0, 1)");
  }
  for (const auto& d : a.data) require_file(fs::path(d) / "metadata.jsonl", "dataset manifest");

  const fs::path out(a.out);
  const fs::path report_path = out.parent_path() / (out.stem().string() + ".retrieval.json");
  RunManifest m("train-evaluator", argc, argv);
  m.set("config", {{"encoder", to_json(cfg)},
                   {"data", a.data},
                   {"steps", a.train.steps},
                   {"batch_size", a.train.batch_size},
                   {"lr", a.train.lr},
                   {"validation_fraction", a.train.validation_fraction},
                   {"distractors", a.distractors}});
  m.set("seed", a.train.seed);
  if (!a.config.empty()) m.input(a.config);
  for (const auto& d : a.data) m.input(d);
  m.output(out);
  m.output(report_path);
  m.write(sibling_manifest(out));

  LoadedDataset data;
  for (const auto& d : a.data) {
    LoadedDataset part = load_dataset(d, cfg.image_side);
    std::move(part.records.begin(), part.records.end(), std::back_inserter(data.records));
    std::move(part.images.begin(), part.images.end(), std::back_inserter(data.images));
  }
  const EvaluatorTrainResult r = contrastive_train(data, cfg, a.train);
  save_evaluator(out, *r.encoder);

  std::vector<ImageTensor> images;
  std::vector<std::string> captions;
  for (std::size_t i : r.validation_indices) {
    images.push_back(data.images[i]);
    captions.push_back(data.records[i].caption);
  }
  const RetrievalReport rr = retrieval_eval(*r.encoder, images, captions, a.distractors, derive_seed(a.train.seed, 5));
  const json report = {{"split", "validation"},
                       {"queries", rr.queries},
                       {"distractors", rr.distractors},
                       {"top1", rr.top1},
                       {"matched_mean_cosine", rr.matched_mean},
                       {"deranged_mean_cosine", rr.deranged_mean},
                       {"temperature", r.encoder->temperature()},
                       {"skipped_batches", r.skipped_batches},
                       {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()}};
  std::ofstream rep(report_path, std::ios::binary | std::ios::trunc);
  if (!rep) throw Error("cannot write " + report_path.string());
  rep << report.dump(2) << '\n';
  std::cout << "validation top-1 " << rr.top1 << " among " << rr.distractors << " distractors; matched cosine "
            << rr.matched_mean << ", deranged " << rr.deranged_mean << '\n';
}

struct PanoramaArgs {
  SampleArgs model;
  std::vector<std::string> scenes;
  std::string seam_prompts;
  std::string out;
  std::size_t gap = 0;
  std::size_t height = 0;
  double band = 0.5;
};

void run_panorama(const PanoramaArgs& a, int argc, char** argv) {
  const SampleOptions base = sample_options(a.model);
  const LoadedModel loaded = load_model(a.model.checkpoint, a.model.adapters);
  const ModelConfig& mc = loaded.model->config;
  for (const auto& s : a.scenes) require_file(s, "scene");

  SceneSequence seq;
  seq.seam_prompts = read_lines(a.seam_prompts);
  seq.gap_width = a.gap;
  std::vector<std::string> names;
  for (const auto& s : a.scenes) {
    const Rgb8Image img = read_png(s);
    if (img.width != mc.image_side || img.height != mc.image_side) {
      throw ConfigError("panorama: scene " + s + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        ", the model needs " + std::to_string(mc.image_side) + " square");
    }
    seq.images.push_back(encode_rgb8(img));
    names.push_back(fs::path(s).stem().string());
  }
  const StitchGeometry geom = stitch_geometry(seq, mc.downsample);
  EquirectOptions eq;
  eq.band_fraction = a.band;
  // Default: keep the strip's horizontal resolution (W = strip width).
  std::size_t height = a.height;
  if (height == 0) height = std::max<std::size_t>(8, (geom.width / 2 + 1) / 2 * 2);
  if (height < 8 || height % 2 != 0) throw ConfigError("panorama: --height must be even and >= 8");
  if (!(a.band > 0.0 && a.band <= 1.0)) throw ConfigError("panorama: --band must be in (0, 1]");

  const fs::path dir(a.out);
  RunManifest m("panorama", argc, argv);
  json cfg = sample_config_json(a.model);
  cfg.erase("prompt");
  cfg["scenes"] = a.scenes;
  cfg["seam_prompts"] = seq.seam_prompts;
  cfg["gap"] = geom.gap;
  cfg["margin"] = geom.margin;
  cfg["height"] = height;
  cfg["band_fraction"] = a.band;
  m.set("config", cfg);
  m.set("seed", a.model.seed);
  note_model_inputs(m, a.model);
  for (const auto& s : a.scenes) m.input(s);
  m.input(a.seam_prompts);
  for (const char* f : {"strip.png", "panorama.png", "panorama.json"}) m.output(dir / f);
  m.write(dir / "panorama.run.json");

  const NoiseSchedule schedule = schedule_for(mc);
  const InpaintFn fill = [&](const ImageTensor& window, const std::vector<std::uint8_t>& mask,
                             const std::string& prompt, std::uint64_t seed) {
    SampleOptions o = base;
    o.seed = seed;
    return inpaint(*loaded.model, schedule, window, mask, prompt, o);
  };
  const ImageTensor strip = stitch(seq, mc.downsample, fill, a.model.seed);
  write_png(dir / "strip.png", decode_rgb8(strip));
  write_png(dir / "panorama.png", decode_rgb8(to_equirectangular(strip, height, eq)));
  const PanoramaMeta meta = panorama_meta(geom, names, seq.seam_prompts, eq, a.model.seed, height);
  std::ofstream js(dir / "panorama.json", std::ios::binary | std::ios::trunc);
  if (!js) throw Error("cannot write " + (dir / "panorama.json").string());
  js << to_json(meta).dump(2) << '\n';
  std::cout << "wrote " << (dir / "panorama.png").string() << " (" << meta.width << "x" << meta.height << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy text-to-garden latent diffusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", GARDEN_VERSION);
  std::string workdir;
  app.add_option("--workdir", workdir, "Resolve relative paths against this directory");

  auto* prep = app.add_subcommand("prepare-data", "Synthesize or ingest a captioned garden dataset");
  PrepareArgs prep_args;
  prep->add_option("--root", prep_args.root, "Dataset directory")->required();
  auto* synth_opt = prep->add_option("--synth", prep_args.synth, "Number of toy images to synthesize")->capture_default_str();
  prep->add_option("--seed", prep_args.seed, "Scene seed")->capture_default_str();
  prep->add_option("--side", prep_args.side, "Image side in pixels")->capture_default_str();
  prep->add_option("--palette", prep_args.palette, "Toy style: paper or ink")->capture_default_str();
  prep->add_option("--ingest", prep_args.ingest, "Filter and scale the real images of this directory instead")
      ->excludes(synth_opt);

  auto* tr = app.add_subcommand("train", "Run one training stage");
  TrainArgs tr_args;
  tr->add_option("--stage", tr_args.stage, "vae, diffusion or lora")->required();
  tr->add_option("--config", tr_args.config, "Training config JSON (flags override its values)");
  tr->add_option("--out", tr_args.out, "Run directory")->required();
  tr->add_option("--data", tr_args.data, "Dataset directories");
  tr->add_option("--init", tr_args.init, "Previous-stage checkpoint");
  tr->add_option("--lora-targets", tr_args.lora_targets, "Regexes naming the projections that get adapters");
  tr->add_option("--resume", tr_args.resume, "Checkpoint to continue from");
  tr->add_option("--stop-after", tr_args.stop_after, "Stop (with a checkpoint) after this step");
  tr->add_option("--set", tr_args.sets, "Override a config key: key=<json value>");
  tr->add_flag("--verbose", tr_args.verbose, "Print every step's loss");

  auto* sa = app.add_subcommand("sample", "Generate an image from a prompt");
  SampleArgs sample_args;
  std::string sample_out;
  add_model_options(sa, sample_args);
  sa->add_option("--prompt", sample_args.prompt, "Text prompt")->required();
  sa->add_option("--out", sample_out, "Output PNG")->required();

  auto* in = app.add_subcommand("inpaint", "Regenerate the masked region of an image");
  SampleArgs inpaint_args;
  std::string in_image, in_mask, in_out;
  add_model_options(in, inpaint_args);
  in->add_option("--prompt", inpaint_args.prompt, "Text prompt")->required();
  in->add_option("--image", in_image, "Source PNG (S x S)")->required();
  in->add_option("--mask", in_mask, "Mask PNG, white = regenerate")->required();
  in->add_option("--out", in_out, "Output PNG")->required();

  auto* ev = app.add_subcommand("evaluate", "Score images against prompts (and references) by cosine similarity");
  EvaluateArgs ev_args;
  ev->add_option("--encoder", ev_args.encoder, "Dual-encoder checkpoint")->required();
  ev->add_option("--images", ev_args.images, "Directory of generated PNGs")->required();
  ev->add_option("--prompts", ev_args.prompts, "Prompts, one per line in image-name order (or one shared)")->required();
  ev->add_option("--refs", ev_args.refs, "Directory of same-named reference PNGs");
  ev->add_option("--out", ev_args.out, "Report JSON")->required();

  auto* te = app.add_subcommand("train-evaluator", "Train the contrastive dual encoder used by evaluate");
  EvaluatorArgs te_args;
  te->add_option("--data", te_args.data, "Dataset directories (keep them apart from diffusion training data)")
      ->required();
  te->add_option("--config", te_args.config, "Encoder architecture JSON");
  te->add_option("--out", te_args.out, "Encoder checkpoint")->required();
  te->add_option("--steps", te_args.train.steps, "Optimizer steps")->capture_default_str();
  te->add_option("--batch", te_args.train.batch_size, "Pairs per batch")->capture_default_str();
  te->add_option("--lr", te_args.train.lr, "Adam learning rate")->capture_default_str();
  te->add_option("--validation-fraction", te_args.train.validation_fraction, "Held-out share")->capture_default_str();
  te->add_option("--seed", te_args.train.seed, "Seed")->capture_default_str();
  te->add_option("--distractors", te_args.distractors, "Retrieval distractors per query")->capture_default_str();

  auto* pa = app.add_subcommand("panorama", "Stitch scenes with inpainted transitions into a 2:1 panorama");
  PanoramaArgs pa_args;
  add_model_options(pa, pa_args.model);
  pa->add_option("--scenes", pa_args.scenes, "Scene PNGs in left-to-right order")->required()->expected(2, -1);
  pa->add_option("--seam-prompts", pa_args.seam_prompts, "Transition prompts, one per line")->required();
  pa->add_option("--out", pa_args.out, "Output directory")->required();
  pa->add_option("--gap", pa_args.gap, "Gap width in pixels (0 = half a scene)")->capture_default_str();
  pa->add_option("--height", pa_args.height, "Panorama height (0 = half the strip width)")->capture_default_str();
  pa->add_option("--band", pa_args.band, "Share of the height the strip occupies")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (!workdir.empty()) fs::current_path(workdir);
    if (*prep) run_prepare(prep_args, argc, argv);
    else if (*tr) run_train(tr_args, argc, argv);
    else if (*sa) run_sample(sample_args, sample_out, argc, argv);
    else if (*in) run_inpaint(inpaint_args, in_image, in_mask, in_out, argc, argv);
    else if (*ev) run_evaluate(ev_args, argc, argv);
    else if (*te) run_train_evaluator(te_args, argc, argv);
    else if (*pa) run_panorama(pa_args, argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
