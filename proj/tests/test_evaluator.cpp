#include <cmath>

#include "doctest.h"
#include "garden/errors.hpp"
#include "garden/evaluator.hpp"
#include "garden/gradcheck.hpp"
#include "model_util.hpp"
#include "test_util.hpp"

using namespace garden;

namespace {

EvaluatorConfig tiny_eval_config() {
  EvaluatorConfig c;
  c.image_side = 8;
  c.image_channels = {2, 3};
  c.context_length = 4;
  c.text_dim = 4;
  c.text_blocks = 1;
  c.embed_dim = 4;
  return c;
}

LoadedDataset toy_split(std::size_t n, std::size_t side) {
  LoadedDataset d;
  for (auto& s : synth_toy_dataset(n, 9, side)) {
    d.records.push_back(s.record);
    d.images.push_back(encode_rgb8(s.image));
  }
  return d;
}

double norm(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  const std::vector<float> u{0.6f, 0.8f}, v{0.8f, 0.6f};
  CHECK(cosine_similarity(u, u) == 1.0);
  CHECK(cosine_similarity(std::vector<float>{1, 0}, std::vector<float>{0, 1}) == 0.0);
  CHECK(cosine_similarity(u, v) == doctest::Approx(0.96).epsilon(1e-6));
  CHECK(cosine_similarity(u, v) == cosine_similarity(v, u));
  CHECK(cosine_similarity(u, std::vector<float>{-0.6f, -0.8f}) == -1.0);
  CHECK_THROWS_AS(cosine_similarity(u, std::vector<float>{1, 0, 0}), DimensionError);
  CHECK_THROWS_AS(cosine_similarity(u, std::vector<float>{1, 1}), NumericsError);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto w = rng.normal_vector<float>(32);
    const double n = norm(w);
    for (auto& x : w) x = static_cast<float>(x / n);
    CHECK(cosine_similarity(w, w) == 1.0);
  }
}

TEST_CASE("contrastive loss closed form for a two-pair batch") {
  const Var<double> eye(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  const double s = 1.0 / 0.07;
  const Var<double> logit_scale(Tensor<double>({1}, {std::log(s)}));
  const double expected = -std::log(std::exp(s) / (std::exp(s) + 1.0));
  CHECK(std::abs(contrastive_loss(eye, eye, logit_scale).item() - expected) <= 1e-12);
  CHECK_THROWS_AS(contrastive_loss(eye, Var<double>(Tensor<double>({3, 2})), logit_scale), DimensionError);
}

TEST_CASE("dual encoder outputs unit rows and passes a gradient check") {
  DualEncoder<double> enc(tiny_eval_config(), toy_vocab(), 4);
  const std::vector<Tensor<double>> images{wave({3, 8, 8}, 0.1), wave({3, 8, 8}, 1.3), wave({3, 8, 8}, 2.2)};
  const std::vector<std::string> captions{"a pond on the left", "a pine", "an empty garden"};
  const auto img = enc.encode_images(images).value();
  const auto txt = enc.encode_texts(captions).value();
  for (std::size_t i = 0; i < 3; ++i) {
    double a = 0, b = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      a += img[i * 4 + k] * img[i * 4 + k];
      b += txt[i * 4 + k] * txt[i * 4 + k];
    }
    CHECK(std::abs(std::sqrt(a) - 1.0) <= 1e-6);
    CHECK(std::abs(std::sqrt(b) - 1.0) <= 1e-6);
  }
  CHECK(enc.temperature() == doctest::Approx(0.07).epsilon(1e-12));

  auto params = all_params(enc.registry);
  const auto report = finite_diff_check(
      [&](const std::vector<Var<double>>&) {
        return contrastive_loss(enc.encode_images(images), enc.encode_texts(captions), enc.logit_scale());
      },
      params);
  INFO("worst input " << report.worst_input << " analytic " << report.worst_analytic << " numeric "
                      << report.worst_numeric);
  CHECK(report.max_relative_error <= 1e-4);

  CHECK_THROWS_AS(enc.encode_images({wave({3, 4, 4})}), DimensionError);
  EvaluatorConfig bad = tiny_eval_config();
  bad.image_side = 6;
  bad.image_channels = {2, 2, 2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("evaluate reports per-pair records and aggregates") {
  DualEncoder<float> enc(EvaluatorConfig{}, toy_vocab(), 2);
  const auto data = toy_split(4, 32);
  std::vector<std::string> prompts, ids;
  for (std::size_t i = 0; i < 4; ++i) {
    prompts.push_back(data.records[i].caption);
    ids.push_back("img" + std::to_string(i));
  }
  const auto rep = evaluate(enc, data.images, ids, prompts, &data.images);
  REQUIRE(rep.records.size() == 4);
  double sum = 0;
  for (const auto& r : rep.records) {
    sum += r.text_image_cos;
    CHECK(r.text_image_cos >= -1.0);
    CHECK(r.text_image_cos <= 1.0);
    REQUIRE(r.image_image_cos);
    CHECK(*r.image_image_cos == 1.0);
  }
  CHECK(rep.text_image.mean == doctest::Approx(sum / 4).epsilon(1e-15));
  REQUIRE(rep.image_image);
  CHECK(rep.image_image->min == 1.0);

  const auto j = to_json(rep);
  CHECK(j.at("records").size() == 4);
  CHECK(j.at("records")[0].contains("prompt"));
  CHECK(j.at("records")[0].contains("image"));
  CHECK(j.at("records")[0].contains("text_image_cos"));
  CHECK(j.at("records")[0].contains("image_image_cos"));
  CHECK(j.at("aggregate").at("count") == 4);

  prompts.pop_back();
  CHECK_THROWS_AS(evaluate(enc, data.images, ids, prompts), DimensionError);
}

TEST_CASE("evaluator weights round-trip and training is deterministic") {
  const auto data = toy_split(24, 8);
  EvaluatorTrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 4;
  tc.seed = 6;
  const auto a = contrastive_train(data, tiny_eval_config(), tc);
  const auto b = contrastive_train(data, tiny_eval_config(), tc);
  CHECK(a.losses == b.losses);
  CHECK(a.losses.size() + a.skipped_batches == 5);
  CHECK_FALSE(a.validation_indices.empty());

  TempDir dir;
  save_evaluator(dir.path() / "enc.ckpt", *a.encoder);
  const auto loaded = load_evaluator(dir.path() / "enc.ckpt");
  NoGradGuard guard;
  const std::vector<Tensor<float>> probe{data.images[0].tensor<float>()};
  CHECK(loaded->encode_images(probe).value().vec() == a.encoder->encode_images(probe).value().vec());
  CHECK(loaded->encode_texts({"a moon"}).value().vec() == a.encoder->encode_texts({"a moon"}).value().vec());

  Checkpoint other;
  other.stage = "vae";
  save_checkpoint(dir.path() / "vae.ckpt", other);
  CHECK_THROWS_AS(load_evaluator(dir.path() / "vae.ckpt"), ConfigError);
}

TEST_CASE("batches without two distinct captions are skipped") {
  LoadedDataset d = toy_split(12, 8);
  for (std::size_t i = 1; i < d.records.size(); ++i) d.records[i].caption = "a pond on the left";
  d.records[0].caption = "a moon on the right";
  EvaluatorTrainConfig tc;
  tc.steps = 10;
  tc.batch_size = 2;
  tc.validation_fraction = 0.0;
  const auto r = contrastive_train(d, tiny_eval_config(), tc);
  CHECK(r.skipped_batches > 0);
  CHECK(r.losses.size() + r.skipped_batches == 10);

  for (auto& rec : d.records) rec.caption = "same";
  CHECK_THROWS_AS(contrastive_train(d, tiny_eval_config(), tc), ConfigError);
}
