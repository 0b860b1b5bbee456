// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Criteria 1-6 exercise the library directly; 7-11 drive the
// `garden` executable through the seeded toy pipeline and inspect what it
// wrote.
//
//   acceptance --cli PATH/garden --work DIR [--only N ...]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "garden/adam.hpp"
#include "garden/dataset.hpp"
#include "garden/diffusion.hpp"
#include "garden/evaluator.hpp"
#include "garden/gradcheck.hpp"
#include "garden/lora.hpp"
#include "garden/panorama.hpp"
#include "garden/trainer.hpp"
#include "json.hpp"
#include "model_util.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"

using namespace garden;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Accumulates named sub-checks; the first failures are kept for the report.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      if (failures_.size() < 4) failures_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }

  Outcome outcome() const {
    std::ostringstream s;
    if (!pass_) {
      s << "failed: ";
      for (std::size_t i = 0; i < failures_.size(); ++i) s << (i ? "; " : "") << failures_[i];
      if (!notes_.empty()) s << " | ";
    }
    for (std::size_t i = 0; i < notes_.size(); ++i) s << (i ? "; " : "") << notes_[i];
    return {pass_, s.str()};
  }

 private:
  bool pass_ = true;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return fs::is_regular_file(a) && fs::is_regular_file(b) && read_bytes(a) == read_bytes(b);
}

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

/// Runs the CLI; stdout and stderr are appended to the work log.
class Cli {
 public:
  Cli(fs::path exe, fs::path log) : exe_(std::move(exe)), log_(std::move(log)) {}

  int operator()(const std::vector<std::string>& args) const {
    std::string cmd = quote(exe_.string());
    for (const auto& a : args) cmd += " " + quote(a);
    {
      std::ofstream log(log_, std::ios::app);
      log << "$ " << cmd << '\n';
    }
    const int status = std::system((cmd + " >> " + quote(log_.string()) + " 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

 private:
  fs::path exe_;
  fs::path log_;
};

// ------------------------------------------------------------ criterion 1

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  Checks c;
  double worst_op = 0;
  std::size_t n_ops = 0;
  for (auto& oc : differentiable_op_cases(17)) {
    const auto rep = finite_diff_check(oc.fn, oc.inputs);
    worst_op = std::max(worst_op, rep.max_relative_error);
    c.expect(rep.max_relative_error <= 1e-5, oc.name + " rel err " + fmt(rep.max_relative_error));
    ++n_ops;
  }

  const ModelConfig cfg = ModelConfig::tiny();  // S = 8
  double worst_net = 0;
  auto net = [&](const std::string& name, const GradCheckFn& fn, std::vector<Var<double>> inputs) {
    const auto rep = finite_diff_check(fn, std::move(inputs));
    worst_net = std::max(worst_net, rep.max_relative_error);
    c.expect(rep.max_relative_error <= 1e-4, name + " rel err " + fmt(rep.max_relative_error));
  };
  {
    Registry<double> reg;
    Rng rng(5);
    const Vocabulary vocab = toy_vocab();
    TextEncoder<double> enc(reg, "text.", vocab.size(), cfg, rng);
    const auto ids = tokenize("a pavilion", vocab, cfg.context_length);
    net("text encoder", [&](const auto&) { return enc(ids); }, all_params(reg));
  }
  {
    Registry<double> reg;
    Rng rng(6);
    Vae<double> vae(reg, "vae.", cfg, rng);
    const Var<double> img(wave({3, 8, 8}));
    const Tensor<double> noise = wave(cfg.latent_shape(), 1.0);
    net("vae",
        [&](const auto&) {
          const auto out = vae.encode(img);
          const auto recon = vae.decode(vae.sample(out, noise));
          return ops::add(ops::mse(recon, img), ops::scale(kl_divergence(out), 1e-3));
        },
        all_params(reg));
  }
  {
    LatentDiffusion<double> model(cfg, toy_vocab(), 7);
    const auto ids = tokenize("a bridge on the right", model.vocab, cfg.context_length);
    const Var<double> z_t(wave(cfg.latent_shape(), 0.5));
    const Var<double> eps(wave(cfg.latent_shape(), 2.0));
    std::vector<Var<double>> inputs;
    for (auto& p : model.registry.params.all())
      if (p.name.rfind("vae.", 0) != 0) inputs.push_back(p.var);
    net("u-net + text encoder", [&](const auto&) { return ops::mse((*model.unet)(z_t, 6, (*model.text)(ids)), eps); },
        inputs);
  }
  {
    EvaluatorConfig ec;
    ec.image_side = 8;
    ec.image_channels = {2, 3};
    ec.context_length = 4;
    ec.text_dim = 4;
    ec.embed_dim = 4;
    DualEncoder<double> enc(ec, toy_vocab(), 4);
    const std::vector<Tensor<double>> images{wave({3, 8, 8}, 0.1), wave({3, 8, 8}, 1.3), wave({3, 8, 8}, 2.2)};
    const std::vector<std::string> captions{"a pond on the left", "a pine", "an empty garden"};
    net("dual encoder",
        [&](const auto&) {
          return contrastive_loss(enc.encode_images(images), enc.encode_texts(captions), enc.logit_scale());
        },
        all_params(enc.registry));
  }
  const double secs = seconds_since(t0);
  c.expect(secs <= 120.0, "took " + fmt(secs) + " s");
  c.note(std::to_string(n_ops) + " ops max rel err " + fmt(worst_op) + " (<= 1e-5); 4 networks at S=8 max " +
         fmt(worst_net) + " (<= 1e-4); " + fmt(secs) + " s");
  return c.outcome();
}

// ------------------------------------------------------------ criterion 2

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Outcome oracle_equivalence() {
  Checks c;
  Rng rng(2024);
  auto dim = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng.below(hi - lo + 1)); };
  auto rand = [&](Shape s) {
    const std::size_t n = shape_numel(s);
    return Var<double>(Tensor<double>(std::move(s), rng.normal_vector<double>(n)));
  };
  double worst[3] = {0, 0, 0};
  for (int i = 0; i < 100; ++i) {
    const auto a = rand({dim(1, 24), dim(1, 24)});
    const auto b = rand({a.shape()[1], dim(1, 24)});
    worst[0] = std::max(worst[0], max_abs_diff(ops::matmul(a, b).value(), oracle::matmul(a.value(), b.value())));
  }
  for (int i = 0; i < 100; ++i) {
    ops::Conv2dGeometry g;
    const std::size_t k = 2 * dim(0, 2) + 1;  // odd kernels: 1, 3, 5
    g.stride = dim(1, 2);
    g.padding = dim(0, 1);
    // pick an input side whose padded extent the stride tiles exactly,
    // sometimes reaching it through trailing padding
    std::size_t h = dim(std::max<std::size_t>(k, 2), 11);
    std::size_t rem = (h + 2 * g.padding - k) % g.stride;
    if (rem != 0) {
      if (rng.below(2) == 0) g.trailing_padding = g.stride - rem;
      else h += g.stride - rem;
    }
    const auto x = rand({dim(1, 4), h, h});
    const auto w = rand({dim(1, 4), x.shape()[0], k, k});
    const auto bias = rng.below(2) == 0 ? Var<double>() : rand({w.shape()[0]});
    const auto ref = oracle::conv2d(x.value(), w.value(), bias.defined() ? bias.value() : Tensor<double>(),
                                    g.stride, g.padding, g.trailing_padding);
    worst[1] = std::max(worst[1], max_abs_diff(ops::conv2d(x, w, bias, g).value(), ref));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = dim(1, 16), lk = dim(1, 16);
    const auto q = rand({dim(1, 16), d});
    const auto k = rand({lk, d});
    const auto v = rand({lk, dim(1, 16)});
    worst[2] = std::max(worst[2], max_abs_diff(ops::attention(q, k, v).value(),
                                               oracle::attention(q.value(), k.value(), v.value())));
  }
  const char* names[3] = {"matmul", "conv2d", "attention"};
  for (int i = 0; i < 3; ++i) {
    c.expect(worst[i] <= 1e-12, std::string(names[i]) + " max abs diff " + fmt(worst[i]));
    c.note(std::string(names[i]) + " " + fmt(worst[i]));
  }
  c.note("100 random shapes each, <= 1e-12");
  return c.outcome();
}

// ------------------------------------------------------------ criterion 3

Outcome forward_statistics() {
  Checks c;
  const std::size_t T = 200, n = 10000;
  const auto s = make_scaled_schedule(T);
  const double x0 = 0.7;
  double worst = 0;  // in standard errors
  for (std::size_t t : {std::size_t{1}, T / 2, T}) {
    Rng rng(40 + t);
    std::vector<double> xs(n);
    for (auto& x : xs) x = q_sample(s, Tensor<double>({1}, {x0}), t, Tensor<double>({1}, {rng.normal()}))[0];
    double mean = 0;
    for (double x : xs) mean += x / static_cast<double>(n);
    double sq = 0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    const double var = sq / static_cast<double>(n - 1);
    const double want_mean = std::sqrt(s.alpha_bars[t]) * x0;
    const double want_var = 1 - s.alpha_bars[t];
    const double se_mean = std::sqrt(want_var / static_cast<double>(n));
    const double se_var = want_var * std::sqrt(2.0 / static_cast<double>(n - 1));
    const double zm = std::abs(mean - want_mean) / se_mean, zv = std::abs(var - want_var) / se_var;
    worst = std::max({worst, zm, zv});
    c.expect(zm <= 3.0, "t=" + std::to_string(t) + " mean off by " + fmt(zm) + " SE");
    c.expect(zv <= 3.0, "t=" + std::to_string(t) + " variance off by " + fmt(zv) + " SE");
  }
  c.note("t in {1, 100, 200}, 10000 draws, worst deviation " + fmt(worst) + " SE (<= 3)");
  return c.outcome();
}

// ------------------------------------------------------------ criterion 4

Outcome pndm_correctness() {
  Checks c;
  auto scalar = [](double v) { return Tensor<double>({1}, {v}); };
  std::deque<Tensor<double>> constant(4, scalar(1.25));
  c.expect(plms_combine(constant)[0] == 1.25, "constant history changed");
  std::deque<Tensor<double>> ones(4, scalar(1.0));
  c.expect(plms_combine(ones)[0] == 1.0, "coefficients do not sum to 24/24");

  const std::size_t T = 200;
  const auto s = make_scaled_schedule(T);
  const auto ts = sampling_timesteps(T, 8);
  const auto abar = oracle::log_space_alpha_bars(T, 1e-4 * 5, 0.02 * 5);
  std::vector<double> visited;
  const double want = oracle::pndm_trajectory(abar, ts, 0.8, [](double x, std::size_t) { return x; }, &visited);
  PndmRun<double> run(s);
  Tensor<double> x = scalar(0.8);
  double worst = 0;
  const EpsFn<double> eps = [](const Tensor<double>& v, std::size_t) { return v; };
  for (std::size_t i = 0; i < ts.size(); ++i) {
    x = run.step(x, ts[i], i + 1 < ts.size() ? ts[i + 1] : 0, eps);
    worst = std::max(worst, std::abs(x[0] - visited[i]));
  }
  worst = std::max(worst, std::abs(x[0] - want));
  c.expect(ts.size() == 8, "expected 8 steps");
  c.expect(worst <= 1e-10, "trajectory differs by " + fmt(worst));
  c.note("constant history preserved; 8-step trajectory max diff " + fmt(worst) + " (<= 1e-10)");
  return c.outcome();
}

// ------------------------------------------------------------ criterion 5

template <typename T>
Tensor<T> unet_probe(const LatentDiffusion<T>& m) {
  NoGradGuard g;
  Tensor<T> z(m.config.latent_shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<T>(std::cos(0.3 * static_cast<double>(i)));
  return (*m.unet)(Var<T>(z), 5, m.encode_prompt("a pine on the left")).value();
}

Outcome lora_contracts(const fs::path& toy) {
  Checks c;
  {
    LatentDiffusion<float> model(ModelConfig{}, toy_vocab(), 1);
    Rng rng(2);
    const auto before = unet_probe(model);
    auto st = inject(model.registry, default_lora_targets(), 4, 4.0, rng);
    bool rank4 = true;
    for (const auto& ad : st.adapters) rank4 = rank4 && ad->rank == 4;
    c.expect(st.adapters.size() == 32 && rank4, "default config gave " + std::to_string(st.adapters.size()) + " adapters");
    const auto after = unet_probe(model);
    c.expect(std::memcmp(before.vec().data(), after.vec().data(), before.size() * sizeof(float)) == 0,
             "zero-init forward changed");
    c.note("default config: " + std::to_string(st.adapters.size()) + " adapters of rank 4, zero-init forward bit-identical");
  }
  {
    LatentDiffusion<float> model(ModelConfig::tiny(), toy_vocab(), 13);
    Rng rng(14);
    auto st = inject(model.registry, default_lora_targets(), 2, 2.0, rng);
    const auto frozen = frozen_checksums(model.registry, st);
    std::map<std::string, std::uint64_t> adapters_before;
    for (const auto& name : st.trainable_names)
      adapters_before[name] = tensor_checksum(model.registry.params.get(name).var.value());
    AdamState<float> adam;
    Tensor<float> z(model.config.latent_shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::sin(static_cast<float>(i));
    for (int step = 0; step < 100; ++step) {
      model.registry.params.zero_grad();
      const auto eps = (*model.unet)(Var<float>(z), static_cast<std::size_t>(step % 10), model.encode_prompt("a pond"));
      ops::mse(eps, Var<float>(Tensor<float>(z.shape(), 0.5f))).backward();
      adam_step(model.registry.params, adam);
    }
    c.expect(frozen_checksums(model.registry, st) == frozen, "a frozen checksum changed");
    std::size_t changed = 0;
    for (const auto& [name, sum] : adapters_before)
      changed += tensor_checksum(model.registry.params.get(name).var.value()) != sum;
    c.expect(changed >= 1, "no adapter changed");
    c.note("100 steps: " + std::to_string(frozen.size()) + " frozen checksums unchanged, " + std::to_string(changed) +
           " adapter tensors changed");
  }
  {
    LatentDiffusion<double> model(ModelConfig::tiny(), toy_vocab(), 10);
    Rng rng(11);
    auto st = inject(model.registry, default_lora_targets(), 2, 2.0, rng);
    Rng fill(12);
    for (auto& ad : st.adapters) {
      for (auto& v : ad->a.mutable_value().vec()) v = fill.normal();
      for (auto& v : ad->b.mutable_value().vec()) v = 0.05 * fill.normal();
    }
    const auto wrapped = unet_probe(model);
    merge(st, model.registry);
    const double diff = max_abs_diff(unet_probe(model), wrapped);
    c.expect(diff <= 1e-12, "merged vs wrapped differ by " + fmt(diff));
    c.note("merged vs wrapped u-net (64-bit) " + fmt(diff));
  }
  // The toy run's lora stage after 100 steps against its diffusion init.
  const fs::path init = toy / "diffusion" / "step_2000.ckpt", after = toy / "lora" / "step_100.ckpt";
  if (fs::exists(init) && fs::exists(after)) {
    const Checkpoint a = load_checkpoint(init), b = load_checkpoint(after);
    std::map<std::string, const std::vector<float>*> base;
    for (const auto& p : a.params) base[p.name] = &p.data;
    std::size_t same = 0, moved = 0, frozen = 0;
    for (const auto& p : b.params) {
      if (p.name.rfind("lora.", 0) == 0) {
        const bool is_b = p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".B") == 0;
        moved += is_b && std::any_of(p.data.begin(), p.data.end(), [](float v) { return v != 0.f; });
        continue;
      }
      ++frozen;
      same += base.count(p.name) && *base.at(p.name) == p.data;
    }
    c.expect(same == frozen && frozen == a.params.size(), "toy lora step 100 changed a frozen parameter");
    c.expect(moved >= 1, "toy lora step 100 left every adapter at zero");
    c.note("toy lora step 100: " + std::to_string(same) + "/" + std::to_string(frozen) + " base tensors bit-identical, " +
           std::to_string(moved) + " adapter B matrices moved");
  }
  return c.outcome();
}

// ------------------------------------------------------------ criterion 6

Outcome dataset_rules(const fs::path& work) {
  Checks c;
  c.expect(filter_record({3000, 2000, true, true}).accepted, "6,000,000 px rejected");
  c.expect(!filter_record({2999, 2000, true, true}).accepted, "5,998,000 px accepted");
  Rng rng(6);
  std::size_t agree = 0;
  const std::size_t n = 2000;
  for (std::size_t i = 0; i < n; ++i) {
    const RawImageMeta m{1 + rng.below(5000), 1 + rng.below(5000), rng.below(2) == 1, rng.below(2) == 1};
    const bool want = m.width * m.height >= 6000000 && m.has_caption && m.has_architecture;
    agree += filter_record(m).accepted == want;
  }
  c.expect(agree == n, "filter disagreed with the conjunction on " + std::to_string(n - agree) + " cases");

  const DatasetRecord row{"000914N000000000.png",
                          "A figure reclines on a couch in the pavilion, whilst the figure in the boat plays on a flute "
                          "and dangles his legs in the water.",
                          true};
  const std::string want_line =
      "{\"file_name\": \"000914N000000000.png\", \"additional_feature\": \"A figure reclines on a couch in the pavilion, "
      "whilst the figure in the boat plays on a flute and dangles his legs in the water.\"}";
  c.expect(manifest_line(row) == want_line, "sample row line differs");
  const fs::path path = work / "c6" / "metadata.jsonl";
  fs::create_directories(path.parent_path());
  write_manifest(path, {row});
  c.expect(read_bytes(path) == want_line + "\n", "written manifest differs from the sample row");
  const auto back = read_manifest(path);
  c.expect(back.size() == 1 && back[0].file_name == row.file_name && back[0].caption == row.caption,
           "sample row did not round-trip");

  const auto toy = synth_toy_dataset(64, 1, 32);
  std::vector<DatasetRecord> records;
  for (const auto& s : toy) records.push_back(s.record);
  write_manifest(path, records);
  const std::string bytes = read_bytes(path);
  bool keys_ok = true;
  std::istringstream lines(bytes);
  for (std::string line; std::getline(lines, line);) {
    const json j = json::parse(line);
    keys_ok = keys_ok && j.size() == 2 && j.contains("file_name") && j.contains("additional_feature");
  }
  c.expect(keys_ok, "a manifest line has keys other than file_name/additional_feature");
  write_manifest(path, read_manifest(path));
  c.expect(read_bytes(path) == bytes, "64-record manifest did not round-trip byte-exactly");
  c.note("filter = conjunction on " + std::to_string(n) + " random records and the 6,000,000 px boundary; sample row "
         "byte-exact; 64-record manifest round-trips");
  return c.outcome();
}

// ------------------------------------------------------------ criterion 7

struct StageSpec {
  std::string name;
  std::size_t total;
  std::size_t every;
};

const std::vector<std::string> kScenePrompts = {
    "a garden with a pavilion on the left and a pond",
    "a garden with a bridge on the right and a pine on the left",
    "a garden with a rock on the right and a moon",
    "a garden with a pond on the right and a pavilion on the right",
};
const std::vector<std::string> kSeamPrompts = {"a garden path with a pine", "a garden with a rock and a pond",
                                               "a garden with a bridge"};

std::vector<double> loss_column(const fs::path& csv) {
  std::vector<double> out;
  for (const auto& [step, loss] : read_loss_log(csv)) out.push_back(loss);
  return out;
}

/// Runs the whole toy pipeline through the CLI and times it.
struct ToyRun {
  bool ok = true;
  std::string error;
  double seconds = 0;
};

ToyRun run_toy_pipeline(const Cli& cli, const fs::path& toy) {
  ToyRun r;
  const auto t0 = Clock::now();
  auto run = [&](const std::vector<std::string>& args) {
    if (!r.ok) return;
    const int code = cli(args);
    if (code != 0) {
      r.ok = false;
      r.error = args[0] + " exited with " + std::to_string(code);
    }
  };
  const std::string d = toy.string();
  run({"prepare-data", "--root", d + "/base", "--synth", "48", "--seed", "1"});
  run({"prepare-data", "--root", d + "/style", "--synth", "16", "--seed", "2", "--palette", "ink"});
  run({"prepare-data", "--root", d + "/evaldata", "--synth", "320", "--seed", "3"});
  write_text(toy / "vae.json", json{{"data", {d + "/base", d + "/style"}},
                                    {"total_steps", 2000},
                                    {"checkpoint_every", 500},
                                    {"seed", 1}}
                                   .dump(2));
  write_text(toy / "diffusion.json", json{{"data", d + "/base"},
                                          {"init", d + "/vae/step_2000.ckpt"},
                                          {"total_steps", 2000},
                                          {"checkpoint_every", 500},
                                          {"preview_steps", 20},
                                          {"seed", 1}}
                                         .dump(2));
  write_text(toy / "lora.json", json{{"data", d + "/style"},
                                     {"init", d + "/diffusion/step_2000.ckpt"},
                                     {"total_steps", 500},
                                     {"checkpoint_every", 100},
                                     {"preview_steps", 20},
                                     {"seed", 1}}
                                    .dump(2));
  run({"train", "--stage", "vae", "--config", d + "/vae.json", "--out", d + "/vae"});
  run({"train", "--stage", "diffusion", "--config", d + "/diffusion.json", "--out", d + "/diffusion"});
  std::vector<std::string> lora{"train", "--stage", "lora", "--config", d + "/lora.json", "--out", d + "/lora",
                                "--lora-targets"};
  for (const auto& t : default_lora_targets()) lora.push_back(t);
  run(lora);
  write_text(toy / "scene_prompts.txt", [] {
    std::string s;
    for (const auto& p : kScenePrompts) s += p + "\n";
    return s;
  }());
  for (std::size_t i = 0; i < kScenePrompts.size(); ++i) {
    run({"sample", "--ckpt", d + "/diffusion/step_2000.ckpt", "--prompt", kScenePrompts[i], "--steps", "50", "--seed",
         std::to_string(100 + i), "--out", d + "/scenes/scene" + std::to_string(i) + ".png"});
  }
  run({"sample", "--ckpt", d + "/diffusion/step_2000.ckpt", "--adapter", d + "/lora/adapters.lora", "--prompt",
       kScenePrompts[0], "--steps", "50", "--seed", "100", "--out", d + "/styled/scene0.png"});
  run({"train-evaluator", "--data", d + "/evaldata", "--out", d + "/evaluator/encoder.ckpt", "--seed", "1"});
  run({"evaluate", "--encoder", d + "/evaluator/encoder.ckpt", "--images", d + "/scenes", "--prompts",
       d + "/scene_prompts.txt", "--out", d + "/evaluation/report.json"});
  write_text(toy / "seam_prompts.txt", [] {
    std::string s;
    for (const auto& p : kSeamPrompts) s += p + "\n";
    return s;
  }());
  std::vector<std::string> pano{"panorama", "--ckpt", d + "/diffusion/step_2000.ckpt", "--seam-prompts",
                                d + "/seam_prompts.txt", "--seed", "7", "--steps", "20", "--out", d + "/panorama",
                                "--scenes"};
  for (std::size_t i = 0; i < kScenePrompts.size(); ++i) pano.push_back(d + "/scenes/scene" + std::to_string(i) + ".png");
  run(pano);
  r.seconds = seconds_since(t0);
  return r;
}

Outcome toy_training(const ToyRun& run, const fs::path& toy) {
  Checks c;
  c.expect(run.ok, run.error);
  c.expect(run.seconds <= 1800.0, "pipeline took " + fmt(run.seconds) + " s");
  std::size_t images = 0;
  for (const char* d : {"base", "style"}) images += fs::exists(toy / d / "metadata.jsonl") ? read_manifest(toy / d / "metadata.jsonl").size() : 0;
  c.expect(images == 64, std::to_string(images) + " training images instead of 64");
  const std::vector<StageSpec> stages{{"vae", 2000, 500}, {"diffusion", 2000, 500}, {"lora", 500, 100}};
  for (const auto& st : stages) {
    const fs::path dir = toy / st.name;
    const auto losses = fs::exists(dir / "loss.csv") ? loss_column(dir / "loss.csv") : std::vector<double>{};
    c.expect(losses.size() == st.total, st.name + " logged " + std::to_string(losses.size()) + " steps");
    if (losses.size() < 10) continue;
    const std::size_t k = losses.size() / 10;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < k; ++i) {
      first += losses[i] / static_cast<double>(k);
      last += losses[losses.size() - k + i] / static_cast<double>(k);
    }
    c.expect(last < 0.5 * first, st.name + " loss " + fmt(first) + " -> " + fmt(last) + " is not halved");
    bool previews = true;
    for (std::size_t step = st.every; step <= st.total; step += st.every) {
      const fs::path p = dir / ("preview_step" + std::to_string(step) + ".png");
      previews = previews && fs::exists(dir / ("step_" + std::to_string(step) + ".ckpt")) && fs::exists(p) &&
                 read_png_size(p) == std::make_pair<std::size_t, std::size_t>(4 * 32, 32);
    }
    c.expect(previews, st.name + " is missing a checkpoint or 4-image preview");
    c.note(st.name + " " + std::to_string(st.total) + " steps, loss " + fmt(first) + " -> " + fmt(last) + " (ratio " +
           fmt(last / first, 2) + ")");
  }
  c.note("64 images, full pipeline " + fmt(run.seconds, 4) + " s on this machine");
  return c.outcome();
}

// ------------------------------------------------------------ criterion 8

Outcome evaluation_discriminates(const fs::path& toy) {
  Checks c;
  const fs::path path = toy / "evaluator" / "encoder.retrieval.json";
  if (!fs::exists(path)) {
    c.expect(false, "no retrieval report");
    return c.outcome();
  }
  const json r = json::parse(read_bytes(path));
  const double top1 = r.at("top1").get<double>();
  const double matched = r.at("matched_mean_cosine").get<double>(), deranged = r.at("deranged_mean_cosine").get<double>();
  c.expect(r.at("distractors").get<std::size_t>() == 8, "distractor count is not 8");
  c.expect(top1 >= 0.6, "top-1 " + fmt(top1));
  c.expect(matched > deranged, "matched " + fmt(matched) + " <= deranged " + fmt(deranged));
  c.expect(fs::exists(toy / "evaluation" / "report.json"), "evaluate wrote no report");
  c.note("held-out top-1 " + fmt(top1) + " over " + std::to_string(r.at("queries").get<std::size_t>()) +
         " queries with 8 distractors; matched cosine " + fmt(matched) + " > deranged " + fmt(deranged));
  return c.outcome();
}

// ------------------------------------------------------------ criterion 9

Outcome inpainting_preservation(const Cli& cli, const fs::path& toy) {
  Checks c;
  const fs::path ckpt = toy / "diffusion" / "step_2000.ckpt";
  const fs::path src_png = toy / "base" / "garden_000000.png";
  if (!fs::exists(ckpt) || !fs::exists(src_png)) {
    c.expect(false, "toy pipeline outputs missing");
    return c.outcome();
  }
  const LoadedModel loaded = model_from_checkpoint(load_checkpoint(ckpt));
  const auto& model = *loaded.model;
  const std::size_t side = model.config.image_side, f = model.config.downsample;
  const Rgb8Image src = read_png(src_png);
  std::vector<std::uint8_t> mask(side * side, 0);
  for (std::size_t y = 6; y < 21; ++y)
    for (std::size_t x = 9; x < 25; ++x) mask[y * side + x] = 1;  // deliberately not cell-aligned

  const auto schedule = schedule_for(model.config);
  SampleOptions opts;
  opts.steps = 20;
  opts.seed = 5;
  InpaintTrace<float> trace;
  const ImageTensor source = encode_rgb8(src);
  const Rgb8Image out = decode_rgb8(inpaint(model, schedule, source, mask, "a garden with a pond", opts, &trace));
  std::size_t kept = 0, total_kept = 0;
  for (std::size_t p = 0; p < side * side; ++p) {
    if (mask[p]) continue;
    ++total_kept;
    kept += std::memcmp(&out.pixels[3 * p], &src.pixels[3 * p], 3) == 0;
  }
  c.expect(kept == total_kept, std::to_string(total_kept - kept) + " unmasked pixels changed");

  const auto known = known_latent_cells(mask, side, f);
  const std::size_t cells = known.size();
  const auto z0 = model.encode_latent(source.tensor<float>());
  std::size_t compared = 0, equal = 0;
  for (std::size_t k = 0; k < trace.latent.size(); ++k) {
    const auto want = q_sample(schedule, z0, trace.t_next[k], trace.noise[k]);
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (!known[i % cells]) continue;
      ++compared;
      equal += std::memcmp(&want[i], &trace.latent[k][i], sizeof(float)) == 0;
    }
  }
  c.expect(trace.latent.size() == opts.steps, "overwrite ran " + std::to_string(trace.latent.size()) + " times");
  c.expect(compared > 0 && equal == compared, std::to_string(compared - equal) + " overwritten latents differ from q_sample");

  // The same contract through the CLI, on the PNG files.
  const fs::path dir = toy / "inpaint";
  fs::create_directories(dir);
  write_mask_png(dir / "mask.png", mask, side, side);
  const int code = cli({"inpaint", "--ckpt", ckpt.string(), "--image", src_png.string(), "--mask", (dir / "mask.png").string(),
                        "--prompt", "a garden with a pond", "--seed", "5", "--steps", "20", "--out", (dir / "out.png").string()});
  c.expect(code == 0, "inpaint exited with " + std::to_string(code));
  if (code == 0) {
    const Rgb8Image cli_out = read_png(dir / "out.png");
    std::size_t cli_kept = 0;
    for (std::size_t p = 0; p < side * side; ++p)
      if (!mask[p]) cli_kept += std::memcmp(&cli_out.pixels[3 * p], &src.pixels[3 * p], 3) == 0;
    c.expect(cli_kept == total_kept, "CLI inpaint changed unmasked pixels");
  }
  c.note(std::to_string(total_kept) + " unmasked pixels byte-equal (library and CLI); " + std::to_string(equal) + "/" +
         std::to_string(compared) + " known latents equal q_sample bit-exactly over " +
         std::to_string(trace.latent.size()) + " steps");
  return c.outcome();
}

// ----------------------------------------------------------- criterion 10

Outcome panorama_geometry(const Cli& cli, const fs::path& toy) {
  Checks c;
  // layout arithmetic over a sweep of sequences
  for (std::size_t n : {2, 3, 5})
    for (std::size_t s : {16, 32})
      for (std::size_t gap : {std::size_t{0}, s / 4, s / 2}) {
        SceneSequence seq;
        seq.images.assign(n, ImageTensor(s, s));
        seq.seam_prompts.assign(n - 1, "a path");
        seq.gap_width = gap;
        const std::size_t g = gap == 0 ? s / 2 : gap;
        const auto geom = stitch_geometry(seq, s / 8);
        c.expect(geom.width == n * s + (n - 1) * g, "strip width for n=" + std::to_string(n));
      }
  {
    // a gap that leaves no known latent column beside the seam is refused
    SceneSequence seq;
    seq.images.assign(2, ImageTensor(16, 16));
    seq.seam_prompts.assign(1, "a path");
    seq.gap_width = 8;
    bool refused = false;
    try {
      stitch_geometry(seq, 4);
    } catch (const ConfigError&) {
      refused = true;
    }
    c.expect(refused, "impossible gap accepted");
  }

  const fs::path dir = toy / "panorama";
  if (!fs::exists(dir / "panorama.png")) {
    c.expect(false, "toy pipeline wrote no panorama");
    return c.outcome();
  }
  const std::size_t n = kScenePrompts.size(), s = 32, gap = s / 2;
  const auto strip = read_png_size(dir / "strip.png");
  c.expect(strip.first == n * s + (n - 1) * gap && strip.second == s,
           "strip is " + std::to_string(strip.first) + "x" + std::to_string(strip.second));
  const Rgb8Image pano = read_png(dir / "panorama.png");
  c.expect(pano.width == 2 * pano.height, "panorama is not 2:1");
  const double wrap = wrap_error(pano);
  c.expect(wrap <= 1.0 / 255.0 + 1e-12, "wrap columns differ by " + fmt(wrap));
  const json meta = json::parse(read_bytes(dir / "panorama.json"));
  bool yaws = true;
  for (const char* key : {"scenes", "seams"})
    for (const auto& e : meta.at(key)) yaws = yaws && e.at("yaw").get<double>() >= 0.0 && e.at("yaw").get<double>() < 360.0;
  c.expect(yaws && meta.at("seams").size() == n - 1, "panorama.json yaws or seams are wrong");

  std::vector<std::string> again{"panorama", "--ckpt", (toy / "diffusion" / "step_2000.ckpt").string(), "--seam-prompts",
                                 (toy / "seam_prompts.txt").string(), "--seed", "7", "--steps", "20", "--out",
                                 (toy / "panorama_again").string(), "--scenes"};
  for (std::size_t i = 0; i < n; ++i) again.push_back((toy / "scenes" / ("scene" + std::to_string(i) + ".png")).string());
  c.expect(cli(again) == 0, "second panorama run failed");
  bool same = true;
  for (const char* f : {"strip.png", "panorama.png", "panorama.json"}) same = same && same_bytes(dir / f, toy / "panorama_again" / f);
  c.expect(same, "panorama bytes differ between identical runs");
  c.note("strip " + std::to_string(strip.first) + " = " + std::to_string(n) + "*32 + " + std::to_string(n - 1) + "*16; panorama " +
         std::to_string(pano.width) + "x" + std::to_string(pano.height) + "; wrap error " + fmt(wrap * 255.0) +
         "/255; rerun byte-identical");
  return c.outcome();
}

// ----------------------------------------------------------- criterion 11

/// A shortened three-stage pipeline run inside `root` with relative paths,
/// so two roots hold byte-comparable runs.
bool short_pipeline(const Cli& cli, const fs::path& root, const fs::path& data) {
  fs::create_directories(root);
  const std::string rel = fs::relative(data, root).string();
  const std::string w = root.string();
  auto ok = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--workdir", w});
    return cli(args) == 0;
  };
  bool good = ok({"train", "--stage", "vae", "--data", rel, "--out", "vae", "--set", "total_steps=40", "--set",
                  "checkpoint_every=20", "--set", "seed=3"});
  good = good && ok({"train", "--stage", "diffusion", "--data", rel, "--init", "vae/step_40.ckpt", "--out", "diffusion",
                     "--set", "total_steps=40", "--set", "checkpoint_every=20", "--set", "preview_steps=8", "--set",
                     "seed=3"});
  std::vector<std::string> lora{"train", "--stage", "lora", "--data", rel, "--init", "diffusion/step_40.ckpt", "--out",
                                "lora", "--set", "total_steps=20", "--set", "checkpoint_every=10", "--set",
                                "preview_steps=8", "--set", "seed=3", "--lora-targets"};
  for (const auto& t : default_lora_targets()) lora.push_back(t);
  good = good && ok(lora);
  good = good && ok({"sample", "--ckpt", "lora/step_20.ckpt", "--prompt", "a garden with a pond", "--steps", "10",
                     "--seed", "9", "--out", "sample.png"});
  return good;
}

Outcome determinism_and_resume(const Cli& cli, const fs::path& work, const fs::path& toy) {
  Checks c;
  const fs::path data = toy / "base";
  const fs::path a = work / "det_a", b = work / "det_b";
  c.expect(short_pipeline(cli, a, data), "first short pipeline failed");
  c.expect(short_pipeline(cli, b, data), "second short pipeline failed");

  std::size_t files = 0, identical = 0;
  for (const char* stage : {"vae", "diffusion", "lora"}) {
    for (const auto& e : fs::directory_iterator(a / stage)) {
      const std::string name = e.path().filename().string();
      if (name == "train.run.json") continue;  // records the differing --workdir
      if (name == "loss.csv") {
        ++files;
        identical += reproducible_loss_text(e.path()) == reproducible_loss_text(b / stage / name);
      } else {
        ++files;
        identical += same_bytes(e.path(), b / stage / name);
      }
    }
  }
  ++files;
  identical += same_bytes(a / "sample.png", b / "sample.png");
  c.expect(files > 10 && identical == files, std::to_string(files - identical) + " of " + std::to_string(files) + " files differ");

  // split runs: stop at the first checkpoint, resume to the end
  const std::string rel = fs::relative(data, a).string();
  auto ok = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--workdir", a.string()});
    return cli(args) == 0;
  };
  const std::vector<std::string> diff{"train", "--stage", "diffusion", "--data", rel, "--init", "vae/step_40.ckpt",
                                      "--set", "total_steps=40", "--set", "checkpoint_every=20", "--set",
                                      "preview_steps=8", "--set", "seed=3", "--out", "diffusion_split"};
  auto with = [](std::vector<std::string> v, std::initializer_list<std::string> extra) {
    v.insert(v.end(), extra);
    return v;
  };
  c.expect(ok(with(diff, {"--stop-after", "20"})), "diffusion first half failed");
  c.expect(ok(with(diff, {"--resume", "diffusion_split/step_20.ckpt"})), "diffusion resume failed");
  std::vector<std::string> lora{"train", "--stage", "lora", "--data", rel, "--init", "diffusion/step_40.ckpt", "--set",
                                "total_steps=20", "--set", "checkpoint_every=10", "--set", "preview_steps=8", "--set",
                                "seed=3", "--out", "lora_split", "--lora-targets"};
  for (const auto& t : default_lora_targets()) lora.push_back(t);
  c.expect(ok(with(lora, {"--stop-after", "10"})), "lora first half failed");
  c.expect(ok(with(lora, {"--resume", "lora_split/step_10.ckpt"})), "lora resume failed");

  std::size_t split_files = 0, split_same = 0;
  for (const auto& [whole, split] : {std::pair<std::string, std::string>{"diffusion", "diffusion_split"}, {"lora", "lora_split"}}) {
    for (const auto& e : fs::directory_iterator(a / whole)) {
      const std::string name = e.path().filename().string();
      if (name == "train.run.json") continue;  // records its own command line
      ++split_files;
      if (name == "loss.csv") split_same += reproducible_loss_text(e.path()) == reproducible_loss_text(a / split / name);
      else split_same += same_bytes(e.path(), a / split / name);
    }
  }
  c.expect(split_same == split_files, std::to_string(split_files - split_same) + " split-run files differ");
  c.note(std::to_string(identical) + "/" + std::to_string(files) +
         " files identical across two seeded runs (checkpoints, previews, adapters, loss logs, sample); " +
         std::to_string(split_same) + "/" + std::to_string(split_files) + " identical between split and whole runs");
  return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string cli_path, work_dir;
  std::vector<int> only;
  app.add_option("--cli", cli_path, "Path to the garden executable")->required();
  app.add_option("--work", work_dir, "Scratch directory (recreated)")->required();
  app.add_option("--only", only, "Run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::absolute(work_dir);
  const fs::path toy = work / "toy";
  const bool all = only.empty();
  auto wanted = [&](int n) { return all || std::find(only.begin(), only.end(), n) != only.end(); };
  // criteria 5 and 7-11 share the toy run
  const bool need_toy = all || std::any_of(only.begin(), only.end(), [](int n) { return n == 5 || n >= 7; });
  if (need_toy) fs::remove_all(work);
  fs::create_directories(work);
  const Cli cli(cli_path, work / "cli.log");

  ToyRun toy_run;
  if (need_toy) toy_run = run_toy_pipeline(cli, toy);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"oracle equivalence", oracle_equivalence},
      {"forward-process statistics", forward_statistics},
      {"PNDM correctness", pndm_correctness},
      {"LoRA contracts", [&] { return lora_contracts(toy); }},
      {"dataset rules", [&] { return dataset_rules(work); }},
      {"toy training", [&] { return toy_training(toy_run, toy); }},
      {"evaluation discriminates", [&] { return evaluation_discriminates(toy); }},
      {"inpainting preservation", [&] { return inpainting_preservation(cli, toy); }},
      {"panorama geometry", [&] { return panorama_geometry(cli, toy); }},
      {"determinism and resume", [&] { return determinism_and_resume(cli, work, toy); }},
  };
  bool pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    pass = pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return pass ? 0 : 1;
}
