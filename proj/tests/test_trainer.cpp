#include <cmath>

#include "doctest.h"
#include "garden/dataset.hpp"
#include "garden/errors.hpp"
#include "garden/trainer.hpp"
#include "test_util.hpp"

using namespace garden;
namespace fs = std::filesystem;

namespace {

/// A tiny corpus and model so whole stages run in well under a second.
struct TinyRun {
  TempDir dir;
  fs::path data = dir.path() / "data";

  TinyRun() { write_dataset(data, synth_toy_dataset(6, 3, 8)); }

  TrainConfig config(Stage stage, std::size_t steps) const {
    TrainConfig c;
    c.stage = stage;
    c.data = {data.string()};
    c.model = ModelConfig::tiny();
    c.model.timesteps = 40;  // the scaled schedule needs T > 20
    c.total_steps = steps;
    c.batch_size = 2;
    c.checkpoint_every = 3;
    c.preview_count = 2;
    c.preview_steps = 4;
    c.preview_prompt = "a pond";
    c.seed = 5;
    c.lr = 3e-3;
    return c;
  }

  fs::path out(const std::string& name) const { return dir.path() / name; }
};

bool same_file(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && read_file(a) == read_file(b);
}

}  // namespace

TEST_CASE("train config round-trips through JSON and rejects bad input") {
  TrainConfig c;
  c.stage = Stage::Lora;
  c.data = {"d"};
  c.init = "i.ckpt";
  c.lora_targets = {"unet\\..*\\.q\\.weight"};
  c.model.timesteps = 50;
  c.caption_dropout = 0.1;
  TrainConfig back;
  merge_json(to_json(c), back);
  CHECK(to_json(back) == to_json(c));
  CHECK(back.model.timesteps == 50);

  CHECK_THROWS_AS(merge_json(nlohmann::json{{"stepz", 1}}, back), ConfigError);
  CHECK_THROWS_AS(merge_json(nlohmann::json{{"lr", "fast"}}, back), ConfigError);
  CHECK_THROWS_AS(merge_json(nlohmann::json{{"stage", "paint"}}, back), ConfigError);
  CHECK_THROWS_AS(merge_json(nlohmann::json::array(), back), ConfigError);
  CHECK_THROWS_AS(merge_json(nlohmann::json{{"data", 3}}, back), ConfigError);

  TrainConfig single;
  merge_json(nlohmann::json{{"data", "one"}}, single);
  CHECK(single.data == std::vector<std::string>{"one"});
  merge_json(nlohmann::json{{"data", {"a", "b"}}}, single);
  CHECK(single.data == std::vector<std::string>{"a", "b"});

  TrainConfig v;
  CHECK_THROWS_AS(v.validate(), ConfigError);  // no data
  v.data = {"d"};
  v.validate();
  v.stage = Stage::Diffusion;
  CHECK_THROWS_AS(v.validate(), ConfigError);  // no init
  v.init = "x";
  v.preview_steps = 3;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v.preview_steps = 10;
  v.batch_size = 0;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v.batch_size = 1;
  v.stage = Stage::Lora;
  try {
    v.validate();
    FAIL("lora stage without targets validated");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lora_targets") != std::string::npos);
  }
  v.lora_targets = {"x"};
  v.preview_count = 0;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v.preview_count = 4;
  v.checkpoint_every = v.total_steps + 1;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  CHECK(parse_stage("lora_finetune") == Stage::Lora);
}

TEST_CASE("vae stage writes checkpoints, previews and a loss log on cadence") {
  TinyRun r;
  const auto res = train(r.config(Stage::Vae, 7), r.out("vae"));
  CHECK(res.final_step == 7);
  // floor(7 / 3) checkpoints; the trailing step is logged but not saved
  REQUIRE(res.checkpoints.size() == 2);
  CHECK(res.checkpoints[0].filename() == "step_3.ckpt");
  CHECK(res.checkpoints[1].filename() == "step_6.ckpt");
  CHECK_FALSE(fs::exists(r.out("vae") / "step_7.ckpt"));
  CHECK(res.previews.size() == 2);
  const Rgb8Image preview = read_png(res.previews[0]);
  CHECK(preview.width == 2 * 8);
  CHECK(preview.height == 8);

  const auto rows = read_loss_log(res.loss_csv);
  REQUIRE(rows.size() == 7);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].first == i + 1);
    CHECK(std::isfinite(rows[i].second));
  }
  CHECK(read_file(res.loss_csv).rfind("step,loss,wall_ms\n", 0) == 0);

  const Checkpoint ck = load_checkpoint(res.final_checkpoint);
  CHECK(ck.stage == "vae");
  CHECK(ck.step == 6);
  CHECK(ck.latent_scale > 0.0);
  CHECK(ck.latent_scale != 1.0);
  for (const auto& name : ck.trainable) CHECK(name.rfind("vae.", 0) == 0);
  CHECK(model_config_of(ck).image_side == 8);
}

TEST_CASE("identical runs are byte-identical and a split run equals an uninterrupted one") {
  TinyRun r;
  const TrainConfig c = r.config(Stage::Vae, 6);
  train(c, r.out("a"));
  train(c, r.out("b"));
  for (const char* f : {"step_3.ckpt", "step_6.ckpt", "preview_step6.png"}) {
    CHECK_MESSAGE(same_file(r.out("a") / f, r.out("b") / f), f);
  }
  CHECK(reproducible_loss_text(r.out("a") / "loss.csv") == reproducible_loss_text(r.out("b") / "loss.csv"));

  TrainRunOptions first;
  first.stop_after = 3;
  const auto part = train(c, r.out("split"), first);
  CHECK(part.final_step == 3);
  CHECK_FALSE(fs::exists(r.out("split") / "step_6.ckpt"));
  TrainRunOptions second;
  second.resume = r.out("split") / "step_3.ckpt";
  train(c, r.out("split"), second);
  for (const char* f : {"step_6.ckpt", "preview_step6.png"}) {
    CHECK_MESSAGE(same_file(r.out("a") / f, r.out("split") / f), f);
  }
  CHECK(reproducible_loss_text(r.out("a") / "loss.csv") == reproducible_loss_text(r.out("split") / "loss.csv"));

  TrainRunOptions off_cadence;
  off_cadence.stop_after = 4;
  CHECK_THROWS_AS(train(c, r.out("odd"), off_cadence), ConfigError);

  TrainConfig changed = c;
  changed.lr = 1e-2;
  CHECK_THROWS_AS(train(changed, r.out("split"), second), ConfigError);
}

TEST_CASE("diffusion and lora stages chain from checkpoints") {
  TinyRun r;
  const auto vae = train(r.config(Stage::Vae, 3), r.out("vae"));

  TrainConfig d = r.config(Stage::Diffusion, 3);
  d.init = vae.final_checkpoint.string();
  const auto diff = train(d, r.out("diffusion"));
  const Checkpoint dck = load_checkpoint(diff.final_checkpoint);
  CHECK(dck.stage == "diffusion");
  const Checkpoint vck = load_checkpoint(vae.final_checkpoint);
  CHECK(dck.latent_scale == vck.latent_scale);
  for (std::size_t i = 0; i < dck.params.size(); ++i) {
    if (dck.params[i].name.rfind("vae.", 0) == 0) CHECK(dck.params[i].data == vck.params[i].data);
  }
  CHECK(read_png(diff.previews.back()).width == 16);

  TrainConfig l = r.config(Stage::Lora, 3);
  l.init = diff.final_checkpoint.string();
  l.lora_targets = {"unet\\..*\\.attn\\.cross\\.(q|v)\\.weight"};
  l.lora_rank = 2;
  const auto lo = train(l, r.out("lora"));
  REQUIRE(lo.adapters);
  REQUIRE(lo.lora_report);
  const auto records = load_adapter_file(*lo.adapters);
  CHECK(records.size() == 8);
  bool moved = false;
  for (const auto& rec : records)
    for (float b : rec.b) moved = moved || b != 0.f;
  CHECK(moved);

  const Checkpoint lck = load_checkpoint(lo.final_checkpoint);
  CHECK(lck.adapters.size() == 8);
  std::map<std::string, std::vector<float>> base;
  for (const auto& p : dck.params) base[p.name] = p.data;
  for (const auto& p : lck.params) {
    if (p.name.rfind("lora.", 0) != 0) CHECK_MESSAGE(base.at(p.name) == p.data, p.name);
  }
  const LoadedModel loaded = model_from_checkpoint(lck);
  CHECK(loaded.lora.adapters.size() == 8);

  TrainConfig bad = l;
  bad.init = vae.final_checkpoint.string();
  CHECK_THROWS_AS(train(bad, r.out("bad")), ConfigError);
}

TEST_CASE("total_steps=10, checkpoint_every=5 gives two checkpoints with previews") {
  TinyRun r;
  TrainConfig c = r.config(Stage::Vae, 10);
  c.checkpoint_every = 5;
  c.preview_count = 4;
  const auto res = train(c, r.out("ten"));
  REQUIRE(res.checkpoints.size() == 2);
  CHECK(res.checkpoints[1].filename() == "step_10.ckpt");
  REQUIRE(res.previews.size() == 2);
  CHECK(read_png(res.previews[1]).width == 4 * 8);
  CHECK(read_loss_log(res.loss_csv).size() == 10);
}

TEST_CASE("a non-finite step writes a crash checkpoint of the state before it") {
  TinyRun r;
  TrainRunOptions run;
  run.before_step = [](LatentDiffusion<float>& m, std::size_t step) {
    if (step == 2) m.registry.params.get("vae.enc.conv_in.weight").var.mutable_value()[0] = NAN;
  };
  try {
    train(r.config(Stage::Vae, 5), r.out("crash"), run);
    FAIL("expected NumericsError");
  } catch (const NumericsError& e) {
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
  const Checkpoint c = load_checkpoint(r.out("crash") / "crash_step2.ckpt");
  CHECK(c.step == 1);
  CHECK(read_loss_log(r.out("crash") / "loss.csv").size() == 1);
}
