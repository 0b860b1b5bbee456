#include <cstring>

#include "doctest.h"
#include "garden/checkpoint.hpp"
#include "garden/errors.hpp"
#include "test_util.hpp"

using namespace garden;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.stage = "diffusion";
  c.step = 42;
  c.config = {{"lr", 0.001}, {"seed", 7}};
  c.vocab = {"<pad>", "<bos>", "<eos>", "<unk>", "pond"};
  c.latent_scale = 1.25;
  c.rng_state = "state words";
  c.adapters = {{"unet.down0.attn.self.q.weight", 4, 4.0}};
  c.params = {{"a.weight", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"a.bias", {2}, {-1.5f, 0.25f}}};
  c.trainable = {"a.weight"};
  c.adam_config.lr = 0.002;
  c.adam_steps = 9;
  c.adam_m = {{"a.weight", {6}, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f}}};
  c.adam_v = {{"a.weight", {6}, {1e-3f, 2e-3f, 3e-3f, 4e-3f, 5e-3f, 6e-3f}}};
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip is lossless and byte-stable") {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back == c);
  CHECK(serialize_checkpoint(back) == bytes);

  TempDir dir;
  save_checkpoint(dir.path() / "x.ckpt", c);
  CHECK(read_file(dir.path() / "x.ckpt") == bytes);
  CHECK(load_checkpoint(dir.path() / "x.ckpt") == c);
}

TEST_CASE("damaged checkpoints are rejected with the reason") {
  const std::string bytes = serialize_checkpoint(sample_checkpoint());

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad_magic), CorruptionError);

  std::string bad_version = bytes;
  bad_version[8] = 2;
  CHECK_THROWS_AS(parse_checkpoint(bad_version), VersionError);

  try {
    parse_checkpoint(bytes.substr(0, bytes.size() - 3));
    FAIL("truncated checkpoint parsed");
  } catch (const CorruptionError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_checkpoint(bytes + "z"), CorruptionError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), Error);
}

TEST_CASE("restore requires matching names and shapes") {
  ParameterSet<float> params;
  params.add("a.weight", Tensor<float>({2, 3}));
  params.add("a.bias", Tensor<float>({2}));
  AdamState<float> adam;
  const Checkpoint c = sample_checkpoint();
  restore_parameters(c, params, adam);
  CHECK(params.get("a.weight").var.value().vec() == c.params[0].data);
  CHECK(params.get("a.weight").trainable);
  CHECK_FALSE(params.get("a.bias").trainable);
  CHECK(adam.step_count == 9);
  CHECK(adam.config.lr == 0.002);
  CHECK(adam.m.at("a.weight") == c.adam_m[0].data);

  Checkpoint again;
  capture_parameters(params, adam, again);
  CHECK(again.params == c.params);
  CHECK(again.adam_m == c.adam_m);
  CHECK(again.trainable == c.trainable);

  ParameterSet<float> wrong_shape;
  wrong_shape.add("a.weight", Tensor<float>({3, 2}));
  wrong_shape.add("a.bias", Tensor<float>({2}));
  CHECK_THROWS_AS(restore_parameters(c, wrong_shape, adam), ConfigError);

  ParameterSet<float> wrong_name;
  wrong_name.add("b.weight", Tensor<float>({2, 3}));
  wrong_name.add("a.bias", Tensor<float>({2}));
  CHECK_THROWS_AS(restore_parameters(c, wrong_name, adam), ConfigError);
}
