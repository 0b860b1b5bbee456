#include "garden/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <sstream>

#include "garden/dataset.hpp"
#include "garden/errors.hpp"

namespace garden {

namespace fs = std::filesystem;
using nlohmann::json;

Stage parse_stage(const std::string& name) {
  if (name == "vae") return Stage::Vae;
  if (name == "diffusion") return Stage::Diffusion;
  if (name == "lora" || name == "lora_finetune") return Stage::Lora;
  throw ConfigError("unknown stage '" + name + "' (expected vae, diffusion or lora)");
}

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::Vae: return "vae";
    case Stage::Diffusion: return "diffusion";
    case Stage::Lora: return "lora";
  }
  return "?";
}

// ------------------------------------------------------------------ config

namespace {

template <typename V>
void take(const json& value, const std::string& key, V& out) {
  try {
    out = value.get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + value.dump());
  }
}

bool merge_model_key(const std::string& key, const json& v, ModelConfig& c) {
  if (key == "image_side") take(v, key, c.image_side);
  else if (key == "downsample") take(v, key, c.downsample);
  else if (key == "latent_channels") take(v, key, c.latent_channels);
  else if (key == "context_length") take(v, key, c.context_length);
  else if (key == "text_dim") take(v, key, c.text_dim);
  else if (key == "text_blocks") take(v, key, c.text_blocks);
  else if (key == "vae_channels") take(v, key, c.vae_channels);
  else if (key == "unet_channels") take(v, key, c.unet_channels);
  else if (key == "unet_mult_low") take(v, key, c.unet_mult_low);
  else if (key == "unet_mult_high") take(v, key, c.unet_mult_high);
  else if (key == "groups") take(v, key, c.groups);
  else if (key == "time_dim") take(v, key, c.time_dim);
  else if (key == "timesteps") take(v, key, c.timesteps);
  else return false;
  return true;
}

void require_object(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object, got " + std::string(j.type_name()));
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_side", c.image_side},         {"downsample", c.downsample},
          {"latent_channels", c.latent_channels}, {"context_length", c.context_length},
          {"text_dim", c.text_dim},             {"text_blocks", c.text_blocks},
          {"vae_channels", c.vae_channels},     {"unet_channels", c.unet_channels},
          {"unet_mult_low", c.unet_mult_low},   {"unet_mult_high", c.unet_mult_high},
          {"groups", c.groups},                 {"time_dim", c.time_dim},
          {"timesteps", c.timesteps}};
}

void merge_json(const nlohmann::json& j, ModelConfig& cfg) {
  require_object(j);
  for (const auto& [key, value] : j.items()) {
    if (!merge_model_key(key, value, cfg)) throw ConfigError("unknown model config key '" + key + "'");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  json j = to_json(c.model);
  j["stage"] = stage_name(c.stage);
  j["data"] = c.data;
  j["init"] = c.init;
  j["total_steps"] = c.total_steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["checkpoint_every"] = c.checkpoint_every;
  j["preview_count"] = c.preview_count;
  j["preview_prompt"] = c.preview_prompt;
  j["preview_steps"] = c.preview_steps;
  j["seed"] = c.seed;
  j["kl_weight"] = c.kl_weight;
  j["train_text_encoder"] = c.train_text_encoder;
  j["caption_dropout"] = c.caption_dropout;
  j["lora_targets"] = c.lora_targets;
  j["lora_rank"] = c.lora_rank;
  j["lora_alpha"] = c.lora_alpha;
  return j;
}

void merge_json(const nlohmann::json& j, TrainConfig& c) {
  require_object(j);
  for (const auto& [key, v] : j.items()) {
    if (merge_model_key(key, v, c.model)) continue;
    if (key == "stage") {
      std::string s;
      take(v, key, s);
      c.stage = parse_stage(s);
    } else if (key == "data") {
      // A single directory or a list of them.
      if (v.is_string()) c.data = {v.get<std::string>()};
      else take(v, key, c.data);
    }
    else if (key == "init") take(v, key, c.init);
    else if (key == "total_steps") take(v, key, c.total_steps);
    else if (key == "batch_size") take(v, key, c.batch_size);
    else if (key == "lr") take(v, key, c.lr);
    else if (key == "checkpoint_every") take(v, key, c.checkpoint_every);
    else if (key == "preview_count") take(v, key, c.preview_count);
    else if (key == "preview_prompt") take(v, key, c.preview_prompt);
    else if (key == "preview_steps") take(v, key, c.preview_steps);
    else if (key == "seed") take(v, key, c.seed);
    else if (key == "kl_weight") take(v, key, c.kl_weight);
    else if (key == "train_text_encoder") take(v, key, c.train_text_encoder);
    else if (key == "caption_dropout") take(v, key, c.caption_dropout);
    else if (key == "lora_targets") take(v, key, c.lora_targets);
    else if (key == "lora_rank") take(v, key, c.lora_rank);
    else if (key == "lora_alpha") take(v, key, c.lora_alpha);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

void TrainConfig::validate() const {
  model.validate();
  if (data.empty()) throw ConfigError("train: 'data' (dataset directory) is required");
  for (const auto& d : data)
    if (d.empty()) throw ConfigError("train: 'data' entries must be non-empty paths");
  if (stage != Stage::Vae && init.empty()) {
    throw ConfigError(std::string("train: stage ") + stage_name(stage) + " needs 'init' (a previous-stage checkpoint)");
  }
  if (total_steps == 0) throw ConfigError("train: total_steps must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be a positive finite number");
  if (checkpoint_every == 0 || checkpoint_every > total_steps) {
    throw ConfigError("train: checkpoint_every must be in [1, total_steps]");
  }
  if (preview_count == 0) throw ConfigError("train: preview_count must be >= 1");
  if (stage != Stage::Vae && preview_steps < 4) {
    throw ConfigError("train: preview_steps must be >= 4 for the PNDM preview sampler");
  }
  if (!(kl_weight >= 0.0)) throw ConfigError("train: kl_weight must be >= 0");
  if (!(caption_dropout >= 0.0 && caption_dropout <= 1.0)) throw ConfigError("train: caption_dropout must be in [0, 1]");
  if (stage == Stage::Lora) {
    if (lora_targets.empty()) {
      throw ConfigError("train: the lora stage needs adapter targets: set lora_targets (--lora-targets)");
    }
    if (lora_rank == 0) throw ConfigError("train: lora_rank must be >= 1");
    if (!(lora_alpha > 0.0)) throw ConfigError("train: lora_alpha must be > 0");
  }
}

// ----------------------------------------------------------------- models

NoiseSchedule schedule_for(const ModelConfig& cfg) { return make_scaled_schedule(cfg.timesteps); }

ModelConfig model_config_of(const Checkpoint& ckpt) {
  TrainConfig tc;
  merge_json(ckpt.config, tc);
  tc.model.validate();
  return tc.model;
}

namespace {

std::string escape_regex(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::string("\\^$.|?*+()[]{}").find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

LoadedModel model_from_checkpoint(const Checkpoint& ckpt) {
  LoadedModel out;
  out.model = std::make_unique<LatentDiffusion<float>>(model_config_of(ckpt), Vocabulary(ckpt.vocab), 0);
  out.model->latent_scale = ckpt.latent_scale;
  for (const auto& spec : ckpt.adapters) {
    // Values are overwritten below, so the init draw does not matter.
    Rng rng(0);
    auto state = inject(out.model->registry, {escape_regex(spec.target)}, spec.rank, spec.alpha, rng);
    for (auto& a : state.adapters) out.lora.adapters.push_back(a);
  }
  AdamState<float> unused;
  restore_parameters(ckpt, out.model->registry.params, unused);
  if (!out.lora.adapters.empty()) {
    for (const auto& p : out.model->registry.params.all()) {
      (p.name.rfind("lora.", 0) == 0 ? out.lora.trainable_names : out.lora.frozen_names).insert(p.name);
    }
  }
  return out;
}

// -------------------------------------------------------------- loss log

std::vector<std::pair<std::size_t, double>> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open loss log " + path.string());
  std::vector<std::pair<std::size_t, double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line.rfind("step,loss", 0) != 0) throw ParseError(path.string() + ": missing 'step,loss' header");
      continue;
    }
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      rows.emplace_back(std::stoull(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

std::string reproducible_loss_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open loss log " + path.string());
  std::string out, line;
  while (std::getline(in, line)) {
    const auto second = line.find(',', line.find(',') + 1);
    out += line.substr(0, second) + "\n";
  }
  return out;
}

namespace {

/// Keeps the header and rows up to `keep_through`, then appends. Rows are
/// flushed as written so a crash leaves every completed step on disk.
class CsvLog {
 public:
  CsvLog(fs::path path, const std::string& header, std::optional<std::size_t> keep_through) : path_(std::move(path)) {
    std::string kept = header + "\n";
    if (keep_through) {
      std::ifstream in(path_);
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (first) {
          first = false;
          continue;
        }
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) <= *keep_through) kept += line + "\n";
      }
    }
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error("cannot write " + path_.string());
    out_ << kept;
    out_.flush();
  }

  void row(std::size_t step, const std::string& value) {
    out_ << step << ',' << value << '\n';
    out_.flush();
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::string format_loss(float loss) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(loss));
  return buf;
}

/// Sample order for a step: consecutive slices of per-epoch permutations,
/// a pure function of (seed, step) so resuming needs no extra state.
class Batcher {
 public:
  Batcher(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {}

  std::vector<std::size_t> indices(std::size_t step) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < batch_; ++j) {
      const std::size_t g = (step - 1) * batch_ + j;
      const std::size_t epoch = g / n_;
      if (epoch != epoch_) {
        perm_ = Rng(derive_seed(seed_, 1000 + epoch)).permutation(n_);
        epoch_ = epoch;
      }
      out.push_back(perm_[g % n_]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::size_t epoch_ = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> perm_;
};

double latent_scale_of(const Vae<float>& vae, const std::vector<ImageTensor>& images) {
  NoGradGuard guard;
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& img : images) {
    const Tensor<float> mean = vae.encode(Var<float>(img.tensor<float>())).mean.value();
    for (float v : mean.vec()) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++n;
    }
  }
  const double mu = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mu * mu;
  return var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
}

struct Posterior {
  Tensor<float> mean;
  Tensor<float> std;
};

Var<float> accumulate(const Var<float>& total, const Var<float>& term) {
  return total.defined() ? ops::add(total, term) : term;
}

/// The stored config must match the requested one except for total_steps.
void check_resume_config(const json& stored, const json& requested) {
  for (const auto& [key, value] : requested.items()) {
    if (key == "total_steps") continue;
    if (!stored.contains(key) || stored.at(key) != value) {
      throw ConfigError("resume: config key '" + key + "' is " + value.dump() + " but the checkpoint was trained with " +
                        (stored.contains(key) ? stored.at(key).dump() : std::string("nothing")));
    }
  }
}

}  // namespace

// ------------------------------------------------------------------ train

namespace {

void check_stop_after(const TrainConfig& config, const TrainRunOptions& run) {
  if (run.stop_after && (*run.stop_after == 0 || *run.stop_after % config.checkpoint_every != 0)) {
    throw ConfigError("train: stop_after must be a positive multiple of checkpoint_every so the run can resume");
  }
}

TrainConfig resolve_with(const TrainConfig& requested, const std::optional<Checkpoint>& init) {
  requested.validate();
  TrainConfig config = requested;
  if (init) {
    // A stage built on a previous one inherits its architecture.
    config.model = model_config_of(*init);
    if (config.stage == Stage::Lora && init->stage != "diffusion") {
      throw ConfigError("train: the lora stage needs a diffusion checkpoint, got a " + init->stage + " one");
    }
  }
  return config;
}

}  // namespace

TrainConfig resolve_config(const TrainConfig& requested) {
  requested.validate();
  std::optional<Checkpoint> init;
  if (!requested.init.empty()) init = load_checkpoint(requested.init);
  return resolve_with(requested, init);
}

std::vector<fs::path> planned_outputs(const TrainConfig& config, const fs::path& out_dir, const TrainRunOptions& run) {
  check_stop_after(config, run);
  const std::size_t end = std::min(config.total_steps, run.stop_after.value_or(config.total_steps));
  std::vector<fs::path> out{out_dir / "loss.csv"};
  for (std::size_t step = config.checkpoint_every; step <= end; step += config.checkpoint_every) {
    if (config.stage == Stage::Lora) out.push_back(out_dir / "adapters.lora");
    out.push_back(out_dir / ("step_" + std::to_string(step) + ".ckpt"));
    out.push_back(out_dir / ("preview_step" + std::to_string(step) + ".png"));
  }
  // The adapter file is rewritten at every checkpoint; list it once.
  std::vector<fs::path> unique;
  for (auto& p : out)
    if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(std::move(p));
  return unique;
}

TrainResult train(const TrainConfig& requested, const fs::path& out_dir, const TrainRunOptions& run) {
  requested.validate();
  std::optional<Checkpoint> init;
  if (!requested.init.empty()) init = load_checkpoint(requested.init);
  TrainConfig config = resolve_with(requested, init);
  check_stop_after(config, run);
  const std::size_t end = std::min(config.total_steps, run.stop_after.value_or(config.total_steps));
  fs::create_directories(out_dir);
  const json config_json = to_json(config);

  LoadedDataset data;
  for (const auto& root : config.data) {
    LoadedDataset part = load_dataset(root, config.model.image_side);
    if (part.records.empty()) throw ConfigError("train: dataset " + root + " is empty");
    std::move(part.records.begin(), part.records.end(), std::back_inserter(data.records));
    std::move(part.images.begin(), part.images.end(), std::back_inserter(data.images));
  }

  std::unique_ptr<LatentDiffusion<float>> model;
  LoraState<float> lora;
  AdamState<float> adam;
  adam.config.lr = config.lr;
  Rng rng(derive_seed(config.seed, 11));
  std::size_t start = 0;

  if (run.resume) {
    const Checkpoint ckpt = load_checkpoint(*run.resume);
    if (ckpt.stage != stage_name(config.stage)) {
      throw ConfigError("resume: checkpoint is from stage " + ckpt.stage + ", not " + stage_name(config.stage));
    }
    check_resume_config(ckpt.config, config_json);
    LoadedModel loaded = model_from_checkpoint(ckpt);
    model = std::move(loaded.model);
    lora = std::move(loaded.lora);
    restore_parameters(ckpt, model->registry.params, adam);
    rng.set_state(ckpt.rng_state);
    start = ckpt.step;
    if (start > config.total_steps) {
      throw ConfigError("resume: checkpoint step " + std::to_string(start) + " is past total_steps " +
                        std::to_string(config.total_steps));
    }
  } else if (init) {
    LoadedModel loaded = model_from_checkpoint(*init);
    model = std::move(loaded.model);
    if (!loaded.lora.adapters.empty()) throw ConfigError("train: init checkpoint already carries LoRA adapters");
  } else {
    std::vector<std::string> captions;
    for (const auto& r : data.records) captions.push_back(r.caption);
    model = std::make_unique<LatentDiffusion<float>>(config.model, Vocabulary::build(captions), derive_seed(config.seed, 1));
  }

  auto& params = model->registry.params;
  if (!run.resume) {
    switch (config.stage) {
      case Stage::Vae:
        params.freeze_all();
        model->set_trainable_prefix("vae.", true);
        break;
      case Stage::Diffusion:
        params.freeze_all();
        model->set_trainable_prefix("unet.", true);
        if (config.train_text_encoder) model->set_trainable_prefix("text.", true);
        break;
      case Stage::Lora: {
        Rng init_rng(derive_seed(config.seed, 4));
        lora = inject(model->registry, config.lora_targets, config.lora_rank, config.lora_alpha, init_rng);
        break;
      }
    }
  }
  const auto frozen_before =
      config.stage == Stage::Lora ? frozen_checksums(model->registry, lora) : std::map<std::string, std::uint64_t>{};

  const NoiseSchedule schedule = schedule_for(config.model);
  std::vector<Tensor<float>> images;
  for (const auto& img : data.images) images.push_back(img.tensor<float>());
  std::vector<Posterior> posteriors;
  if (config.stage != Stage::Vae) {
    NoGradGuard guard;
    for (const auto& img : images) {
      auto enc = model->vae->encode(Var<float>(img));
      Tensor<float> std_dev = enc.logvar.value();
      for (auto& v : std_dev.vec()) v = std::exp(0.5f * v);
      posteriors.push_back({enc.mean.value(), std::move(std_dev)});
    }
  }

  Batcher batcher(images.size(), config.batch_size, config.seed);

  auto step_loss = [&](std::size_t step) -> Var<float> {
    const auto idx = batcher.indices(step);
    const float inv_batch = 1.f / static_cast<float>(idx.size());
    if (config.stage == Stage::Vae) {
      Var<float> total;
      for (std::size_t i : idx) {
        const Var<float> x(images[i]);
        const auto enc = model->vae->encode(x);
        const Tensor<float> noise(enc.mean.shape(), rng.normal_vector<float>(enc.mean.size()));
        const Var<float> recon = model->vae->decode(model->vae->sample(enc, noise));
        const float kl_scale = static_cast<float>(config.kl_weight / static_cast<double>(x.size()));
        total = accumulate(total, ops::add(ops::mse(recon, x), ops::scale(kl_divergence(enc), kl_scale)));
      }
      return ops::scale(total, inv_batch);
    }
    std::vector<Tensor<float>> z0s, epss;
    std::vector<std::size_t> ts;
    std::vector<Var<float>> contexts;
    const float scale = static_cast<float>(model->latent_scale);
    for (std::size_t i : idx) {
      const Posterior& post = posteriors[i];
      Tensor<float> z = post.mean;
      const auto noise = rng.normal_vector<float>(z.size());
      for (std::size_t k = 0; k < z.size(); ++k) z[k] = (z[k] + post.std[k] * noise[k]) * scale;
      z0s.push_back(std::move(z));
      ts.push_back(1 + static_cast<std::size_t>(rng.below(schedule.T)));
      epss.emplace_back(z0s.back().shape(), rng.normal_vector<float>(z0s.back().size()));
      const bool drop = config.caption_dropout > 0.0 && rng.bernoulli(config.caption_dropout);
      contexts.push_back(model->encode_prompt(drop ? std::string() : data.records[i].caption));
    }
    return noise_prediction_loss<float>(schedule, z0s, ts, epss,
                                        [&](const Var<float>& z_t, std::size_t t, std::size_t index) {
                                          return (*model->unet)(z_t, t - 1, contexts[index]);
                                        });
  };

  TrainResult result;
  result.loss_csv = out_dir / "loss.csv";

  auto make_checkpoint = [&](std::size_t step, const std::string& rng_state) {
    Checkpoint c;
    c.stage = stage_name(config.stage);
    c.step = step;
    c.config = config_json;
    c.vocab = model->vocab.tokens();
    c.latent_scale = model->latent_scale;
    c.rng_state = rng_state;
    for (const auto& a : lora.adapters) c.adapters.push_back({a->target_name, a->rank, a->alpha});
    capture_parameters(params, adam, c);
    return c;
  };

  auto write_preview = [&](std::size_t step) {
    std::vector<ImageTensor> tiles;
    if (config.stage == Stage::Vae) {
      NoGradGuard guard;
      for (std::size_t i = 0; i < std::min(config.preview_count, images.size()); ++i) {
        const auto enc = model->vae->encode(Var<float>(images[i]));
        tiles.push_back(ImageTensor::from_tensor(model->vae->decode(enc.mean).value()));
      }
    } else {
      for (std::size_t i = 0; i < config.preview_count; ++i) {
        SampleOptions opts;
        opts.steps = config.preview_steps;
        opts.seed = derive_seed(config.seed ^ step, i);
        tiles.push_back(sample(*model, schedule, config.preview_prompt, opts));
      }
    }
    const fs::path path = out_dir / ("preview_step" + std::to_string(step) + ".png");
    write_png(path, decode_rgb8(tile_horizontal(tiles)));
    result.previews.push_back(path);
  };

  auto checkpoint = [&](std::size_t step) {
    if (config.stage == Stage::Vae) model->latent_scale = latent_scale_of(*model->vae, data.images);
    if (config.stage == Stage::Lora) {
      verify_frozen(model->registry, lora, frozen_before);
      const fs::path path = out_dir / "adapters.lora";
      save_adapters(path, lora);
      result.adapters = path;
    }
    const fs::path path = out_dir / ("step_" + std::to_string(step) + ".ckpt");
    save_checkpoint(path, make_checkpoint(step, rng.state()));
    result.checkpoints.push_back(path);
    result.final_checkpoint = path;
    write_preview(step);
  };

  std::optional<std::size_t> keep;
  if (run.resume) keep.emplace(start);
  CsvLog loss_log(result.loss_csv, "step,loss,wall_ms", keep);

  for (std::size_t step = start + 1; step <= end; ++step) {
    if (run.before_step) run.before_step(*model, step);
    const auto t0 = std::chrono::steady_clock::now();
    const std::string rng_before = rng.state();
    params.zero_grad();
    float loss = 0.f;
    try {
      const Var<float> total = step_loss(step);
      loss = total.item();
      if (!std::isfinite(loss)) throw NumericsError("non-finite loss " + format_loss(loss));
      total.backward();
      adam_step(params, adam);
    } catch (const NumericsError& e) {
      const fs::path path = out_dir / ("crash_step" + std::to_string(step) + ".ckpt");
      save_checkpoint(path, make_checkpoint(step - 1, rng_before));
      throw NumericsError(std::string(stage_name(config.stage)) + " step " + std::to_string(step) + ": " + e.what() +
                          "; state before the step saved to " + path.string());
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    loss_log.row(step, format_loss(loss) + "," + std::to_string(static_cast<long long>(std::llround(ms))));
    if (run.verbose) std::cerr << stage_name(config.stage) << " step " << step << " loss " << format_loss(loss) << '\n';
    if (step % config.checkpoint_every == 0) checkpoint(step);
    result.final_step = step;
  }
  if (result.final_step == 0) result.final_step = start;
  if (config.stage == Stage::Lora) result.lora_report = trainable_report(model->registry, lora);
  return result;
}

}  // namespace garden
