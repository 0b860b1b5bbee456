#include "garden/networks.hpp"

#include <cmath>

namespace garden {

namespace {

constexpr ops::Conv2dGeometry kSame{1, 1, 0};
// Odd kernel, stride 2: one extra zero row/column on the far edge halves an
// even input exactly.
constexpr ops::Conv2dGeometry kHalve{2, 0, 1};

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t log2_exact(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

}  // namespace

void ModelConfig::validate() const {
  if (!is_power_of_two(downsample) || downsample < 2) throw ConfigError("downsample factor must be a power of two >= 2");
  if (image_side == 0 || image_side % downsample != 0) {
    throw ConfigError("image side " + std::to_string(image_side) + " is not divisible by downsample factor " +
                      std::to_string(downsample));
  }
  if (latent_side() % 2 != 0) throw ConfigError("latent side must be even for the U-Net's two levels");
  if (vae_channels.size() != log2_exact(downsample) + 1) {
    throw ConfigError("vae_channels needs log2(downsample) + 1 = " + std::to_string(log2_exact(downsample) + 1) +
                      " entries");
  }
  for (std::size_t c : vae_channels) {
    if (c == 0) throw ConfigError("vae channel counts must be positive");
  }
  if (context_length < 2) throw ConfigError("context length must hold <bos> and <eos>");
  if (text_dim == 0 || text_dim % 2 != 0) throw ConfigError("text_dim must be positive and even");
  if (time_dim == 0 || unet_channels % 2 != 0) throw ConfigError("unet_channels must be even");
  const std::size_t lo = unet_channels * unet_mult_low, hi = unet_channels * unet_mult_high;
  for (std::size_t c : {lo, hi, lo + hi, 2 * hi}) {
    if (groups == 0 || c % groups != 0) {
      throw ConfigError("U-Net channel count " + std::to_string(c) + " is not divisible by " +
                        std::to_string(groups) + " groups");
    }
  }
  if (latent_channels == 0) throw ConfigError("latent_channels must be positive");
  if (timesteps < 2) throw ConfigError("timesteps must be at least 2");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_side = 8;
  c.downsample = 2;
  c.latent_channels = 2;
  c.context_length = 4;
  c.text_dim = 8;
  c.text_blocks = 1;
  c.vae_channels = {4, 4};
  c.unet_channels = 4;
  c.groups = 2;
  c.time_dim = 8;
  c.timesteps = 10;
  return c;
}

// ---------------------------------------------------------------- text

template <typename T>
TextEncoder<T>::TextEncoder(Registry<T>& reg, const std::string& prefix, std::size_t vocab_size,
                            const ModelConfig& cfg, Rng& rng)
    : length_(cfg.context_length),
      positions_({cfg.context_length, cfg.text_dim}),
      final_norm_(reg, prefix + "final_norm", cfg.text_dim) {
  table_ = reg.params.add(prefix + "token_embedding",
                          Tensor<T>({vocab_size, cfg.text_dim}, rng.normal_vector<T>(vocab_size * cfg.text_dim)));
  for (std::size_t p = 0; p < length_; ++p) {
    const auto row = sinusoidal_embedding<T>(static_cast<double>(p), cfg.text_dim);
    std::copy(row.vec().begin(), row.vec().end(), positions_.vec().begin() + static_cast<long>(p * cfg.text_dim));
  }
  for (std::size_t b = 0; b < cfg.text_blocks; ++b) {
    blocks_.push_back(std::make_unique<EncoderBlock<T>>(reg, prefix + "block" + std::to_string(b), cfg.text_dim, rng));
  }
}

template <typename T>
Var<T> TextEncoder<T>::operator()(const std::vector<int>& ids) const {
  if (ids.size() != length_) {
    throw DimensionError("text encoder expects " + std::to_string(length_) + " ids, got " + std::to_string(ids.size()));
  }
  Var<T> h = ops::add(ops::embedding(table_, ids), Var<T>(positions_));
  for (const auto& block : blocks_) h = (*block)(h);
  return final_norm_(h);
}

// ----------------------------------------------------------------- vae

template <typename T>
Vae<T>::Vae(Registry<T>& reg, const std::string& prefix, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto& ch = cfg.vae_channels;
  const std::size_t levels = ch.size() - 1;
  enc_in_ = std::make_unique<Conv2d<T>>(reg, prefix + "enc.conv_in", 3, ch[0], 3, kSame, rng);
  enc_conv_ = std::make_unique<Conv2d<T>>(reg, prefix + "enc.conv0", ch[0], ch[0], 3, kSame, rng);
  for (std::size_t i = 0; i < levels; ++i) {
    const std::string name = prefix + "enc.level" + std::to_string(i + 1);
    enc_levels_.push_back({std::make_unique<Conv2d<T>>(reg, name + ".down", ch[i], ch[i + 1], 3, kHalve, rng),
                           std::make_unique<Conv2d<T>>(reg, name + ".conv", ch[i + 1], ch[i + 1], 3, kSame, rng)});
  }
  enc_out_ = std::make_unique<Conv2d<T>>(reg, prefix + "enc.conv_out", ch[levels], 2 * cfg.latent_channels, 3, kSame,
                                         rng);

  dec_in_ = std::make_unique<Conv2d<T>>(reg, prefix + "dec.conv_in", cfg.latent_channels, ch[levels], 3, kSame, rng);
  dec_conv_ = std::make_unique<Conv2d<T>>(reg, prefix + "dec.conv0", ch[levels], ch[levels], 3, kSame, rng);
  for (std::size_t i = levels; i-- > 0;) {
    const std::string name = prefix + "dec.level" + std::to_string(i);
    dec_levels_.push_back({std::make_unique<Conv2d<T>>(reg, name + ".up", ch[i + 1], ch[i], 3, kSame, rng),
                           std::make_unique<Conv2d<T>>(reg, name + ".conv", ch[i], ch[i], 3, kSame, rng)});
  }
  dec_out_ = std::make_unique<Conv2d<T>>(reg, prefix + "dec.conv_out", ch[0], 3, 3, kSame, rng);
}

template <typename T>
VaeOutput<T> Vae<T>::encode(const Var<T>& image) const {
  const Shape expected{3, cfg_.image_side, cfg_.image_side};
  if (image.shape() != expected) {
    throw DimensionError("vae encode expects " + shape_str(expected) + ", got " + shape_str(image.shape()));
  }
  Var<T> h = ops::silu((*enc_in_)(image));
  h = ops::silu((*enc_conv_)(h));
  for (const auto& level : enc_levels_) {
    h = ops::silu((*level.resample)(h));
    h = ops::silu((*level.conv)(h));
  }
  h = (*enc_out_)(h);
  const std::size_t c = cfg_.latent_channels;
  return {ops::slice0(h, 0, c), ops::clamp(ops::slice0(h, c, 2 * c), T(-30), T(20))};
}

template <typename T>
Var<T> Vae<T>::sample(const VaeOutput<T>& out, const Tensor<T>& noise) const {
  if (noise.shape() != out.mean.shape()) {
    throw DimensionError("vae sample noise " + shape_str(noise.shape()) + " does not match latent " +
                         shape_str(out.mean.shape()));
  }
  const Var<T> std = ops::exp(ops::scale(out.logvar, T(0.5)));
  return ops::add(out.mean, ops::mul(std, Var<T>(noise)));
}

template <typename T>
Var<T> Vae<T>::decode(const Var<T>& z) const {
  if (z.shape() != cfg_.latent_shape()) {
    throw DimensionError("vae decode expects " + shape_str(cfg_.latent_shape()) + ", got " + shape_str(z.shape()));
  }
  Var<T> h = ops::silu((*dec_in_)(z));
  h = ops::silu((*dec_conv_)(h));
  for (const auto& level : dec_levels_) {
    h = ops::silu((*level.resample)(ops::upsample2x(h)));
    h = ops::silu((*level.conv)(h));
  }
  return ops::tanh((*dec_out_)(h));
}

template <typename T>
Var<T> kl_divergence(const VaeOutput<T>& out) {
  const Var<T> var = ops::exp(out.logvar);
  const Var<T> terms = ops::sub(ops::add(ops::mul(out.mean, out.mean), var), out.logvar);
  // 1/2 sum(mu^2 + var - logvar) - n/2
  const T n = static_cast<T>(out.mean.size());
  const Var<T> total = ops::scale(ops::sum(terms), T(0.5));
  return ops::add(total, Var<T>(Tensor<T>({1}, -n / T(2))));
}

// ---------------------------------------------------------------- unet

template <typename T>
UNet<T>::UNet(Registry<T>& reg, const std::string& prefix, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const std::size_t lo = cfg.unet_channels * cfg.unet_mult_low;
  const std::size_t hi = cfg.unet_channels * cfg.unet_mult_high;
  const std::size_t td = cfg.time_dim, g = cfg.groups, ctx = cfg.text_dim;
  time1_ = std::make_unique<Linear<T>>(reg, prefix + "time.fc1", cfg.unet_channels, td, true, rng);
  time2_ = std::make_unique<Linear<T>>(reg, prefix + "time.fc2", td, td, true, rng);
  conv_in_ = std::make_unique<Conv2d<T>>(reg, prefix + "conv_in", cfg.latent_channels, lo, 3, kSame, rng);
  down0_res_ = std::make_unique<ResBlock<T>>(reg, prefix + "down0.res", lo, lo, td, g, rng);
  down0_attn_ = std::make_unique<SpatialTransformer<T>>(reg, prefix + "down0.attn", lo, ctx, g, rng);
  downsample_ = std::make_unique<Conv2d<T>>(reg, prefix + "down0.downsample", lo, lo, 3, kHalve, rng);
  down1_res_ = std::make_unique<ResBlock<T>>(reg, prefix + "down1.res", lo, hi, td, g, rng);
  down1_attn_ = std::make_unique<SpatialTransformer<T>>(reg, prefix + "down1.attn", hi, ctx, g, rng);
  mid_res_ = std::make_unique<ResBlock<T>>(reg, prefix + "mid.res", hi, hi, td, g, rng);
  up1_res_ = std::make_unique<ResBlock<T>>(reg, prefix + "up1.res", 2 * hi, hi, td, g, rng);
  up1_attn_ = std::make_unique<SpatialTransformer<T>>(reg, prefix + "up1.attn", hi, ctx, g, rng);
  upsample_ = std::make_unique<Conv2d<T>>(reg, prefix + "up1.upsample", hi, hi, 3, kSame, rng);
  up0_res_ = std::make_unique<ResBlock<T>>(reg, prefix + "up0.res", hi + lo, lo, td, g, rng);
  up0_attn_ = std::make_unique<SpatialTransformer<T>>(reg, prefix + "up0.attn", lo, ctx, g, rng);
  out_norm_ = std::make_unique<GroupNorm<T>>(reg, prefix + "out.norm", lo, g);
  conv_out_ = std::make_unique<Conv2d<T>>(reg, prefix + "out.conv", lo, cfg.latent_channels, 3, kSame, rng);
}

template <typename T>
Var<T> UNet<T>::operator()(const Var<T>& z_t, std::size_t t, const Var<T>& context) const {
  if (t >= cfg_.timesteps) {
    throw IndexError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(cfg_.timesteps) + ")");
  }
  if (z_t.shape() != cfg_.latent_shape()) {
    throw DimensionError("U-Net expects latent " + shape_str(cfg_.latent_shape()) + ", got " + shape_str(z_t.shape()));
  }
  const Shape ctx_shape{cfg_.context_length, cfg_.text_dim};
  if (context.shape() != ctx_shape) {
    throw DimensionError("U-Net expects context " + shape_str(ctx_shape) + ", got " + shape_str(context.shape()));
  }
  const Tensor<T> tfeat =
      sinusoidal_embedding<T>(static_cast<double>(t), cfg_.unet_channels).reshaped({1, cfg_.unet_channels});
  const Var<T> temb = (*time2_)(ops::silu((*time1_)(Var<T>(tfeat))));

  const Var<T> h0 = (*down0_attn_)((*down0_res_)((*conv_in_)(z_t), temb), context);
  Var<T> h = (*downsample_)(h0);
  const Var<T> h1 = (*down1_attn_)((*down1_res_)(h, temb), context);
  h = (*mid_res_)(h1, temb);
  h = (*up1_attn_)((*up1_res_)(ops::concat0(h, h1), temb), context);
  h = (*upsample_)(ops::upsample2x(h));
  h = (*up0_attn_)((*up0_res_)(ops::concat0(h, h0), temb), context);
  return (*conv_out_)(ops::silu((*out_norm_)(h)));
}

// ------------------------------------------------------------ aggregate

template <typename T>
LatentDiffusion<T>::LatentDiffusion(const ModelConfig& cfg, Vocabulary vocabulary, std::uint64_t seed)
    : config(cfg), vocab(std::move(vocabulary)) {
  config.validate();
  Rng text_rng(derive_seed(seed, 1)), vae_rng(derive_seed(seed, 2)), unet_rng(derive_seed(seed, 3));
  text = std::make_unique<TextEncoder<T>>(registry, "text.", vocab.size(), config, text_rng);
  vae = std::make_unique<Vae<T>>(registry, "vae.", config, vae_rng);
  unet = std::make_unique<UNet<T>>(registry, "unet.", config, unet_rng);
}

template <typename T>
Var<T> LatentDiffusion<T>::encode_prompt(const std::string& prompt) const {
  return (*text)(tokenize(prompt, vocab, config.context_length));
}

template <typename T>
Tensor<T> LatentDiffusion<T>::encode_latent(const Tensor<T>& image) const {
  NoGradGuard guard;
  Tensor<T> z = vae->encode(Var<T>(image)).mean.value();
  for (auto& v : z.vec()) v = static_cast<T>(v * latent_scale);
  return z;
}

template <typename T>
Tensor<T> LatentDiffusion<T>::decode_latent(const Tensor<T>& z) const {
  NoGradGuard guard;
  Tensor<T> unscaled = z;
  for (auto& v : unscaled.vec()) v = static_cast<T>(v / latent_scale);
  return vae->decode(Var<T>(unscaled)).value();
}

template <typename T>
void LatentDiffusion<T>::set_trainable_prefix(const std::string& prefix, bool trainable) {
  for (auto& p : registry.params.all()) {
    if (p.name.rfind(prefix, 0) == 0) registry.params.set_trainable(p.name, trainable);
  }
}

#define GARDEN_INSTANTIATE(T)                              \
  template class TextEncoder<T>;                           \
  template class Vae<T>;                                   \
  template class UNet<T>;                                  \
  template struct LatentDiffusion<T>;                      \
  template Var<T> kl_divergence<T>(const VaeOutput<T>&);

GARDEN_INSTANTIATE(float)
GARDEN_INSTANTIATE(double)

}  // namespace garden
