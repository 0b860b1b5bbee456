#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "garden/checkpoint.hpp"
#include "garden/diffusion.hpp"
#include "garden/lora.hpp"
#include "json.hpp"

namespace garden {

enum class Stage { Vae, Diffusion, Lora };
Stage parse_stage(const std::string& name);
const char* stage_name(Stage stage);

/// A training run. Every field has a documented default and round-trips
/// through a flat JSON object.
struct TrainConfig {
  Stage stage = Stage::Vae;
  std::vector<std::string> data;  // dataset directories (metadata.jsonl + images), concatenated
  std::string init;            // checkpoint of the previous stage; required after vae
  std::size_t total_steps = 2000;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  std::size_t checkpoint_every = 500;
  std::size_t preview_count = 4;
  std::string preview_prompt = "a garden with a pavilion on the left and a pond";
  std::size_t preview_steps = 20;
  std::uint64_t seed = 0;
  double kl_weight = 1e-3;     // vae stage
  bool train_text_encoder = true;  // diffusion stage
  double caption_dropout = 0.0;    // diffusion/lora: chance a caption trains as ""
  std::vector<std::string> lora_targets;  // lora stage; required there
  std::size_t lora_rank = 4;
  double lora_alpha = 4.0;
  ModelConfig model;           // used when the vae stage starts from scratch

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
void merge_json(const nlohmann::json& j, ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
void merge_json(const nlohmann::json& j, TrainConfig& cfg);

struct TrainRunOptions {
  std::optional<std::filesystem::path> resume;  // continue from this checkpoint
  std::optional<std::size_t> stop_after;        // end early at this checkpoint step
  bool verbose = false;
  /// Called before each step with the model and the 1-based step number;
  /// lets tests inject faults.
  std::function<void(LatentDiffusion<float>&, std::size_t)> before_step;
};

struct TrainResult {
  std::size_t final_step = 0;
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> previews;
  std::filesystem::path loss_csv;
  std::optional<std::filesystem::path> adapters;
  std::optional<TrainableReport> lora_report;
};

/// Runs one stage. Writes step_{N}.ckpt every checkpoint_every steps,
/// preview_step{N}.png beside each, loss.csv, and for the lora stage
/// adapters.lora. A non-finite loss or gradient writes
/// crash_step{N}.ckpt holding the pre-step state, then throws NumericsError.
/// loss.csv rows are `step,loss,wall_ms`; the first two columns are
/// reproducible byte for byte, the last is measured time.
TrainResult train(const TrainConfig& config, const std::filesystem::path& out_dir, const TrainRunOptions& run = {});

/// Validates a requested config and materializes what a run derives from
/// its inputs: a stage with `init` takes the init checkpoint's model config.
TrainConfig resolve_config(const TrainConfig& requested);

/// Files a run of `resolved` writes into `out_dir`, in write order: loss.csv,
/// then per checkpoint step the adapter file (lora stage), step_N.ckpt and
/// preview_stepN.png.
std::vector<std::filesystem::path> planned_outputs(const TrainConfig& resolved, const std::filesystem::path& out_dir,
                                                   const TrainRunOptions& run = {});

struct LoadedModel {
  std::unique_ptr<LatentDiffusion<float>> model;
  LoraState<float> lora;  // empty unless the checkpoint carries adapters
};

/// Rebuilds a model, re-attaching any adapters, and copies every parameter
/// value and trainable flag out of the checkpoint.
LoadedModel model_from_checkpoint(const Checkpoint& ckpt);
ModelConfig model_config_of(const Checkpoint& ckpt);
/// Schedule matching a model config: the T-scaled linear schedule.
NoiseSchedule schedule_for(const ModelConfig& cfg);

/// step,loss pairs of a loss.csv (wall-clock column dropped).
std::vector<std::pair<std::size_t, double>> read_loss_log(const std::filesystem::path& path);
/// The loss.csv text with the wall_ms column removed: the part that must be
/// byte-identical across identical runs.
std::string reproducible_loss_text(const std::filesystem::path& path);

}  // namespace garden
