#include <algorithm>
#include <cmath>
#include <regex>

#include "doctest.h"
#include "garden/gradcheck.hpp"
#include "garden/lora.hpp"
#include "garden/networks.hpp"
#include "model_util.hpp"
#include "test_util.hpp"

using namespace garden;

TEST_CASE("tokenize examples") {
  const Vocabulary vocab = Vocabulary::build({"Pavilion beside the pond.", "A pine"});
  SUBCASE("empty string") {
    const auto ids = tokenize("", vocab, 16);
    REQUIRE(ids.size() == 16);
    CHECK(ids[0] == kBosId);
    CHECK(ids[1] == kEosId);
    CHECK(std::all_of(ids.begin() + 2, ids.end(), [](int i) { return i == kPadId; }));
  }
  SUBCASE("construction") {
    const auto ids = tokenize("pavilion beside pond", vocab, 16);
    CHECK(std::vector<int>(ids.begin(), ids.begin() + 5) ==
          std::vector<int>{kBosId, vocab.id("pavilion"), vocab.id("beside"), vocab.id("pond"), kEosId});
    CHECK(ids[5] == kPadId);
    CHECK(vocab.id("pavilion") > kUnkId);
  }
  SUBCASE("lowercase, punctuation and unknown words") {
    const auto ids = tokenize("PAVILION,  dragon!", vocab, 6);
    CHECK(ids == std::vector<int>{kBosId, vocab.id("pavilion"), kUnkId, kEosId, kPadId, kPadId});
  }
  SUBCASE("truncation keeps eos last") {
    std::string text;
    for (int i = 0; i < 40; ++i) text += "pine ";
    const auto ids = tokenize(text, vocab, 16);
    REQUIRE(ids.size() == 16);
    CHECK(ids[0] == kBosId);
    CHECK(ids[15] == kEosId);
    CHECK(ids[14] == vocab.id("pine"));
  }
  SUBCASE("vocabulary file round trip") {
    TempDir dir;
    vocab.save(dir.path() / "vocab.txt");
    const auto text = read_file(dir.path() / "vocab.txt");
    CHECK(text.rfind("<pad>\n<bos>\n<eos>\n<unk>\n", 0) == 0);
    const auto back = Vocabulary::load(dir.path() / "vocab.txt");
    CHECK(back == vocab);
    CHECK(back.hash() == vocab.hash());
  }
}

TEST_CASE("default config has the documented shapes") {
  ModelConfig cfg;
  cfg.validate();
  CHECK(cfg.latent_shape() == Shape{4, 8, 8});
  LatentDiffusion<float> model(cfg, toy_vocab(), 1);

  const auto text = model.encode_prompt("a pavilion");
  CHECK(text.shape() == Shape{16, 64});
  const auto enc = model.vae->encode(Var<float>(Tensor<float>({3, 32, 32}, 0.1f)));
  CHECK(enc.mean.shape() == Shape{4, 8, 8});
  CHECK(enc.logvar.shape() == Shape{4, 8, 8});
  CHECK(model.vae->decode(enc.mean).shape() == Shape{3, 32, 32});
  const auto eps = (*model.unet)(enc.mean, 199, text);
  CHECK(eps.shape() == Shape{4, 8, 8});

  // 8 attention layers x (q, k, v, out) inside the U-Net
  const std::regex attn(R"(unet\..*\.attn\.(self|cross)\.(q|k|v|out)\.weight)");
  std::size_t count = 0;
  for (const auto& [name, layer] : model.registry.linears) count += std::regex_match(name, attn);
  CHECK(count == 32);
}

TEST_CASE("network contract errors") {
  ModelConfig cfg = ModelConfig::tiny();
  LatentDiffusion<double> model(cfg, toy_vocab(), 2);
  const Var<double> ctx = model.encode_prompt("garden");
  const Var<double> z(wave(cfg.latent_shape()));
  CHECK_THROWS_AS((*model.unet)(z, cfg.timesteps, ctx), IndexError);
  CHECK_THROWS_AS((*model.unet)(Var<double>(Tensor<double>({2, 2, 2})), 0, ctx), DimensionError);
  CHECK_THROWS_AS(model.vae->encode(Var<double>(Tensor<double>({3, 6, 6}))), DimensionError);
  std::vector<int> bad(cfg.context_length, kPadId);
  bad[1] = static_cast<int>(model.vocab.size());
  CHECK_THROWS_AS((*model.text)(bad), IndexError);

  ModelConfig odd = cfg;
  odd.image_side = 10;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
}

TEST_CASE("networks are deterministic and respond to their inputs") {
  ModelConfig cfg = ModelConfig::tiny();
  LatentDiffusion<double> a(cfg, toy_vocab(), 3);
  LatentDiffusion<double> b(cfg, toy_vocab(), 3);
  const auto ta = a.encode_prompt("a pavilion on the left");
  CHECK(ta.value() == b.encode_prompt("a pavilion on the left").value());
  CHECK(ta.value() != a.encode_prompt("a bridge on the left").value());
  const Var<double> z(wave(cfg.latent_shape()));
  const auto ea = (*a.unet)(z, 3, ta);
  CHECK(ea.value() == (*b.unet)(z, 3, ta).value());
  CHECK(ea.value() != (*a.unet)(z, 4, ta).value());
}

TEST_CASE("vae sampling and KL closed forms") {
  ModelConfig cfg = ModelConfig::tiny();
  LatentDiffusion<double> model(cfg, toy_vocab(), 4);
  const auto enc = model.vae->encode(Var<double>(wave({3, 8, 8})));
  const auto z = model.vae->sample(enc, Tensor<double>(enc.mean.shape()));
  CHECK(z.value() == enc.mean.value());

  VaeOutput<double> unit{Var<double>(Tensor<double>({2, 2, 2})), Var<double>(Tensor<double>({2, 2, 2}))};
  CHECK(kl_divergence(unit).item() == 0.0);
  VaeOutput<double> shifted{Var<double>(Tensor<double>({1}, {2.0})), Var<double>(Tensor<double>({1}, {0.0}))};
  CHECK(kl_divergence(shifted).item() == doctest::Approx(2.0));

  const auto img = model.vae->decode(enc.mean).value();
  for (double v : img.vec()) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("full-network gradient checks at miniature dimensions") {
  ModelConfig cfg = ModelConfig::tiny();

  SUBCASE("text encoder") {
    Registry<double> reg;
    Rng rng(5);
    const Vocabulary vocab = toy_vocab();
    TextEncoder<double> enc(reg, "text.", vocab.size(), cfg, rng);
    const auto ids = tokenize("a pavilion", vocab, cfg.context_length);
    auto rep = finite_diff_check([&](const auto&) { return enc(ids); }, all_params(reg));
    INFO("worst input " << reg.params.all()[rep.worst_input].name << " a=" << rep.worst_analytic
                        << " n=" << rep.worst_numeric);
    CHECK(rep.max_relative_error <= 1e-5);
  }
  SUBCASE("vae reconstruction + KL loss") {
    Registry<double> reg;
    Rng rng(6);
    Vae<double> vae(reg, "vae.", cfg, rng);
    const Var<double> img(wave({3, 8, 8}));
    const Tensor<double> noise = wave(cfg.latent_shape(), 1.0);
    auto loss = [&](const auto&) {
      const auto out = vae.encode(img);
      const auto recon = vae.decode(vae.sample(out, noise));
      return ops::add(ops::mse(recon, img), ops::scale(kl_divergence(out), 1e-3));
    };
    auto rep = finite_diff_check(loss, all_params(reg));
    INFO("worst input " << reg.params.all()[rep.worst_input].name << " a=" << rep.worst_analytic
                        << " n=" << rep.worst_numeric);
    CHECK(rep.max_relative_error <= 1e-4);
  }
  SUBCASE("u-net with text encoder, one-step noise loss") {
    LatentDiffusion<double> model(cfg, toy_vocab(), 7);
    const auto ids = tokenize("a bridge on the right", model.vocab, cfg.context_length);
    const Var<double> z_t(wave(cfg.latent_shape(), 0.5));
    const Var<double> eps(wave(cfg.latent_shape(), 2.0));
    auto loss = [&](const auto&) { return ops::mse((*model.unet)(z_t, 6, (*model.text)(ids)), eps); };
    std::vector<Var<double>> inputs;
    for (auto& p : model.registry.params.all())
      if (p.name.rfind("vae.", 0) != 0) inputs.push_back(p.var);
    auto rep = finite_diff_check(loss, inputs);
    INFO("worst input " << rep.worst_input << " a=" << rep.worst_analytic << " n=" << rep.worst_numeric);
    CHECK(rep.max_relative_error <= 1e-4);
    MESSAGE("u-net gradient check: " << rep.elements_checked << " elements, max rel err " << rep.max_relative_error);
  }
}
