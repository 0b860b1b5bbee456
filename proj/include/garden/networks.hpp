#pragma once

#include <memory>
#include <string>
#include <vector>

#include "garden/layers.hpp"
#include "garden/tokenizer.hpp"

namespace garden {

struct ModelConfig {
  std::size_t image_side = 32;        // S
  std::size_t downsample = 4;         // f, a power of two
  std::size_t latent_channels = 4;    // c_lat
  std::size_t context_length = 16;    // L
  std::size_t text_dim = 64;          // d_text
  std::size_t text_blocks = 2;
  std::vector<std::size_t> vae_channels{16, 32, 32};  // one entry per resolution, log2(f) + 1 entries
  std::size_t unet_channels = 32;
  std::size_t unet_mult_low = 1;      // multiplier at the latent resolution
  std::size_t unet_mult_high = 2;     // multiplier at half the latent resolution
  std::size_t groups = 8;
  std::size_t time_dim = 128;
  std::size_t timesteps = 200;        // T; the U-Net accepts 0 <= t < T

  std::size_t latent_side() const { return image_side / downsample; }
  Shape latent_shape() const { return {latent_channels, latent_side(), latent_side()}; }

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;

  /// Miniature dimensions used by gradient checks (S=8, f=2).
  static ModelConfig tiny();
};

template <typename T>
class TextEncoder {
 public:
  TextEncoder(Registry<T>& reg, const std::string& prefix, std::size_t vocab_size, const ModelConfig& cfg,
              Rng& rng);
  /// ids of length L -> [L x d_text]. IndexError on an id outside the vocabulary.
  Var<T> operator()(const std::vector<int>& ids) const;

 private:
  std::size_t length_;
  Var<T> table_;
  Tensor<T> positions_;
  std::vector<std::unique_ptr<EncoderBlock<T>>> blocks_;
  LayerNorm<T> final_norm_;
};

template <typename T>
struct VaeOutput {
  Var<T> mean;
  Var<T> logvar;  // clamped to [-30, 20]
};

template <typename T>
class Vae {
 public:
  Vae(Registry<T>& reg, const std::string& prefix, const ModelConfig& cfg, Rng& rng);

  VaeOutput<T> encode(const Var<T>& image) const;
  /// mean + exp(logvar / 2) * noise
  Var<T> sample(const VaeOutput<T>& out, const Tensor<T>& noise) const;
  /// Latent -> [3 x S x S] in [-1, 1].
  Var<T> decode(const Var<T>& z) const;

 private:
  struct Level {
    std::unique_ptr<Conv2d<T>> resample;
    std::unique_ptr<Conv2d<T>> conv;
  };
  ModelConfig cfg_;
  std::unique_ptr<Conv2d<T>> enc_in_, enc_conv_, enc_out_;
  std::vector<Level> enc_levels_;
  std::unique_ptr<Conv2d<T>> dec_in_, dec_conv_, dec_out_;
  std::vector<Level> dec_levels_;
};

/// KL(N(mean, exp(logvar)) || N(0, I)) = 1/2 sum(mean^2 + exp(logvar) - 1 - logvar).
template <typename T>
Var<T> kl_divergence(const VaeOutput<T>& out);

/// Two-level conditional U-Net noise predictor. Each level has a ResBlock
/// and a SpatialTransformer on the way down and on the way up, so the
/// default config has 8 attention layers.
template <typename T>
class UNet {
 public:
  UNet(Registry<T>& reg, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  /// z_t: latent, t: 0-based timestep in [0, T), context: [L x d_text].
  Var<T> operator()(const Var<T>& z_t, std::size_t t, const Var<T>& context) const;

 private:
  ModelConfig cfg_;
  std::unique_ptr<Linear<T>> time1_, time2_;
  std::unique_ptr<Conv2d<T>> conv_in_;
  std::unique_ptr<ResBlock<T>> down0_res_, down1_res_, mid_res_, up1_res_, up0_res_;
  std::unique_ptr<SpatialTransformer<T>> down0_attn_, down1_attn_, up1_attn_, up0_attn_;
  std::unique_ptr<Conv2d<T>> downsample_, upsample_;
  std::unique_ptr<GroupNorm<T>> out_norm_;
  std::unique_ptr<Conv2d<T>> conv_out_;
};

/// Text encoder, VAE and U-Net sharing one registry under the prefixes
/// "text.", "vae." and "unet.".
template <typename T>
struct LatentDiffusion {
  LatentDiffusion(const ModelConfig& config, Vocabulary vocabulary, std::uint64_t seed);
  LatentDiffusion(const LatentDiffusion&) = delete;
  LatentDiffusion& operator=(const LatentDiffusion&) = delete;

  ModelConfig config;
  Vocabulary vocab;
  Registry<T> registry;
  std::unique_ptr<TextEncoder<T>> text;
  std::unique_ptr<Vae<T>> vae;
  std::unique_ptr<UNet<T>> unet;
  /// Multiplies VAE latents before diffusion; 1/std of training latents.
  double latent_scale = 1.0;

  Var<T> encode_prompt(const std::string& prompt) const;
  /// Scaled posterior mean, without graph.
  Tensor<T> encode_latent(const Tensor<T>& image) const;
  /// Unscales and decodes, without graph.
  Tensor<T> decode_latent(const Tensor<T>& z) const;
  void set_trainable_prefix(const std::string& prefix, bool trainable);
};

}  // namespace garden
