#include "garden/diffusion.hpp"

#include <cmath>

namespace garden {

NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("noise schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("noise schedule needs 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) +
                      " -> " + std::to_string(beta_end));
  }
  NoiseSchedule s;
  s.T = T;
  s.betas.assign(T + 1, 0.0);
  s.alphas.assign(T + 1, 1.0);
  s.alpha_bars.assign(T + 1, 1.0);
  for (std::size_t t = 1; t <= T; ++t) {
    s.betas[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
    s.alphas[t] = 1.0 - s.betas[t];
    s.alpha_bars[t] = s.alpha_bars[t - 1] * s.alphas[t];
  }
  return s;
}

NoiseSchedule make_scaled_schedule(std::size_t T) {
  const double k = 1000.0 / static_cast<double>(T);
  return make_linear_schedule(T, 1e-4 * k, 0.02 * k);
}

namespace {

void check_t(const NoiseSchedule& s, std::size_t t, std::size_t lo, const char* what) {
  if (t < lo || t > s.T) {
    throw IndexError(std::string(what) + ": timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                     ", " + std::to_string(s.T) + "]");
  }
}

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> q_sample(const NoiseSchedule& s, const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps) {
  check_t(s, t, 0, "q_sample");
  check_same(x0, eps, "q_sample");
  const T a = static_cast<T>(std::sqrt(s.alpha_bars[t]));
  const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bars[t]));
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

template <typename T>
Var<T> noise_prediction_loss(const NoiseSchedule& s, const std::vector<Tensor<T>>& z0s,
                             const std::vector<std::size_t>& ts, const std::vector<Tensor<T>>& epss,
                             const NoisePredictor<T>& predictor) {
  if (z0s.empty() || z0s.size() != ts.size() || z0s.size() != epss.size()) {
    throw DimensionError("noise_prediction_loss: batch sizes " + std::to_string(z0s.size()) + ", " +
                         std::to_string(ts.size()) + ", " + std::to_string(epss.size()));
  }
  Var<T> total;
  for (std::size_t i = 0; i < z0s.size(); ++i) {
    check_t(s, ts[i], 1, "noise_prediction_loss");
    const Tensor<T> z_t = q_sample(s, z0s[i], ts[i], epss[i]);
    const Var<T> l = ops::mse(predictor(Var<T>(z_t), ts[i], i), Var<T>(epss[i]));
    if (!std::isfinite(static_cast<double>(l.item()))) {
      throw NumericsError("non-finite noise-prediction loss at t=" + std::to_string(ts[i]) + ", batch index " +
                          std::to_string(i));
    }
    total = total.defined() ? ops::add(total, l) : l;
  }
  return ops::scale(total, static_cast<T>(1.0 / static_cast<double>(z0s.size())));
}

template <typename T>
Tensor<T> ddpm_step(const NoiseSchedule& s, const Tensor<T>& x_t, const Tensor<T>& eps_hat, std::size_t t,
                    const Tensor<T>& z, std::optional<std::size_t> t_prev) {
  check_t(s, t, 1, "ddpm_step");
  const std::size_t prev = t_prev.value_or(t - 1);
  if (prev >= t) throw StateError("ddpm_step: previous timestep " + std::to_string(prev) + " is not below " + std::to_string(t));
  check_same(x_t, eps_hat, "ddpm_step");
  check_same(x_t, z, "ddpm_step");
  if (prev == 0) {
    for (T v : z.vec()) {
      if (v != T(0)) throw StateError("ddpm_step: the final step to t=0 must use zero noise");
    }
  }
  const double alpha = s.alpha_bars[t] / s.alpha_bars[prev];
  const double beta = 1.0 - alpha;
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double eps_coef = beta / std::sqrt(1.0 - s.alpha_bars[t]);
  const double sigma = std::sqrt(beta);
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(inv_sqrt_alpha * (static_cast<double>(x_t[i]) - eps_coef * static_cast<double>(eps_hat[i])) +
                            sigma * static_cast<double>(z[i]));
  }
  return out;
}

template <typename T>
Tensor<T> pndm_transfer(const NoiseSchedule& s, const Tensor<T>& x, const Tensor<T>& eps, std::size_t t,
                        std::size_t t_next) {
  check_t(s, t, 0, "pndm_transfer");
  check_t(s, t_next, 0, "pndm_transfer");
  check_same(x, eps, "pndm_transfer");
  const double at = s.alpha_bars[t], an = s.alpha_bars[t_next];
  const double x_coef = std::sqrt(an) / std::sqrt(at);
  const double e_coef = (an - at) / (std::sqrt(at) * (std::sqrt((1.0 - an) * at) + std::sqrt((1.0 - at) * an)));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(x_coef * static_cast<double>(x[i]) - e_coef * static_cast<double>(eps[i]));
  }
  return out;
}

template <typename T>
Tensor<T> plms_combine(const std::deque<Tensor<T>>& h) {
  if (h.size() < 4) throw StateError("linear multistep needs 4 stored predictions, have " + std::to_string(h.size()));
  for (std::size_t k = 1; k < 4; ++k) check_same(h[0], h[k], "plms_combine");
  Tensor<T> out(h[0].shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = 55.0 * h[0][i] - 59.0 * h[1][i] + 37.0 * h[2][i] - 9.0 * h[3][i];
    out[i] = static_cast<T>(v / 24.0);
  }
  return out;
}

template <typename T>
Tensor<T> PndmRun<T>::step(const Tensor<T>& x, std::size_t t, std::size_t t_next, const EpsFn<T>& eps) {
  if (t <= t_next) {
    throw StateError("PNDM timesteps must decrease: " + std::to_string(t) + " -> " + std::to_string(t_next));
  }
  if (expected_t_ && *expected_t_ != t) {
    throw StateError("PNDM step from t=" + std::to_string(t) + " does not continue the previous step to t=" +
                     std::to_string(*expected_t_));
  }
  const NoiseSchedule& s = *schedule_;
  Tensor<T> out;
  if (transitions_ < kWarmupTransitions) {
    if (t_next == 0) throw StateError("PNDM warmup cannot end at t=0; use at least 4 steps");
    const std::size_t mid = t - (t - t_next) / 2;
    const Tensor<T> e1 = eps(x, t);
    const Tensor<T> e2 = eps(pndm_transfer(s, x, e1, t, mid), mid);
    const Tensor<T> e3 = eps(pndm_transfer(s, x, e2, t, mid), mid);
    const Tensor<T> e4 = eps(pndm_transfer(s, x, e3, t, t_next), t_next);
    Tensor<T> e(x.shape());
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = static_cast<T>((static_cast<double>(e1[i]) + 2.0 * e2[i] + 2.0 * e3[i] + static_cast<double>(e4[i])) / 6.0);
    }
    history_.push_front(e1);
    out = pndm_transfer(s, x, e, t, t_next);
  } else {
    history_.push_front(eps(x, t));
    if (history_.size() > 4) history_.pop_back();
    out = pndm_transfer(s, x, plms_combine(history_), t, t_next);
  }
  ++transitions_;
  expected_t_ = t_next;
  return out;
}

std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps) {
  if (steps == 0 || steps > T) {
    throw ConfigError("sampling steps must be in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
  }
  const std::size_t stride = T / steps;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < steps; ++i) out.push_back(T - i * stride);
  return out;
}

SamplerKind parse_sampler(const std::string& name) {
  if (name == "ddpm") return SamplerKind::Ddpm;
  if (name == "pndm") return SamplerKind::Pndm;
  throw ConfigError("unknown sampler '" + name + "' (expected ddpm or pndm)");
}

const char* sampler_name(SamplerKind kind) { return kind == SamplerKind::Ddpm ? "ddpm" : "pndm"; }

template <typename T>
Tensor<T> sample_latent(const LatentDiffusion<T>& model, const NoiseSchedule& schedule, const std::string& prompt,
                        const SampleOptions& options, Rng& rng,
                        const std::function<void(Tensor<T>&, std::size_t)>& after_step) {
  if (schedule.T != model.config.timesteps) {
    throw ConfigError("schedule has T=" + std::to_string(schedule.T) + " but the model was built for T=" +
                      std::to_string(model.config.timesteps));
  }
  if (options.sampler == SamplerKind::Pndm && options.steps < 4) {
    throw ConfigError("the PNDM sampler needs at least 4 steps");
  }
  const auto ts = sampling_timesteps(schedule.T, options.steps);
  NoGradGuard guard;
  const Var<T> cond = model.encode_prompt(prompt);
  const bool guided = options.guidance_scale != 1.0;
  const Var<T> uncond = guided ? model.encode_prompt("") : Var<T>();
  const T g = static_cast<T>(options.guidance_scale);

  const EpsFn<T> eps_fn = [&](const Tensor<T>& x, std::size_t t) {
    const Var<T> xv(x);
    Tensor<T> c = (*model.unet)(xv, t - 1, cond).value();
    if (!guided) return c;
    const Tensor<T> u = (*model.unet)(xv, t - 1, uncond).value();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = u[i] + g * (c[i] - u[i]);
    return c;
  };

  const Shape shape = model.config.latent_shape();
  Tensor<T> x(shape, rng.normal_vector<T>(shape_numel(shape)));
  PndmRun<T> run(schedule);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const std::size_t t_next = i + 1 < ts.size() ? ts[i + 1] : 0;
    if (options.sampler == SamplerKind::Ddpm) {
      const Tensor<T> eps = eps_fn(x, t);
      const Tensor<T> z = t_next == 0 ? Tensor<T>(shape) : Tensor<T>(shape, rng.normal_vector<T>(x.size()));
      x = ddpm_step(schedule, x, eps, t, z, t_next);
    } else {
      x = run.step(x, t, t_next, eps_fn);
    }
    x.check_finite("sampled latent");
    if (after_step) after_step(x, t_next);
  }
  return x;
}

namespace {

template <typename T>
ImageTensor decode_to_image(const LatentDiffusion<T>& model, const Tensor<T>& z) {
  Tensor<T> img = model.decode_latent(z);
  for (auto& v : img.vec()) v = std::clamp(v, T(-1), T(1));
  return ImageTensor::from_tensor(img);
}

}  // namespace

template <typename T>
ImageTensor sample(const LatentDiffusion<T>& model, const NoiseSchedule& schedule, const std::string& prompt,
                   const SampleOptions& options) {
  Rng rng(options.seed);
  return decode_to_image(model, sample_latent(model, schedule, prompt, options, rng));
}

std::vector<std::uint8_t> known_latent_cells(const std::vector<std::uint8_t>& mask, std::size_t side,
                                             std::size_t factor) {
  if (mask.size() != side * side) throw DimensionError("mask has " + std::to_string(mask.size()) + " pixels, expected " + std::to_string(side * side));
  const std::size_t ls = side / factor;
  std::vector<std::uint8_t> known(ls * ls, 0);
  for (std::size_t cy = 0; cy < ls; ++cy)
    for (std::size_t cx = 0; cx < ls; ++cx) {
      std::size_t keep = 0;
      for (std::size_t y = 0; y < factor; ++y)
        for (std::size_t x = 0; x < factor; ++x) keep += mask[(cy * factor + y) * side + cx * factor + x] == 0;
      known[cy * ls + cx] = 2 * keep > factor * factor;
    }
  return known;
}

template <typename T>
ImageTensor inpaint(const LatentDiffusion<T>& model, const NoiseSchedule& schedule, const ImageTensor& source,
                    const std::vector<std::uint8_t>& mask, const std::string& prompt, const SampleOptions& options,
                    InpaintTrace<T>* trace) {
  const std::size_t S = model.config.image_side;
  if (source.height != S || source.width != S) {
    throw DimensionError("inpaint source is " + std::to_string(source.width) + "x" + std::to_string(source.height) +
                         ", model side is " + std::to_string(S));
  }
  if (mask.size() != S * S) throw ConfigError("inpaint mask must have " + std::to_string(S * S) + " pixels");
  std::size_t ones = 0;
  for (auto m : mask) {
    if (m > 1) throw ConfigError("inpaint mask values must be 0 or 1");
    ones += m;
  }
  if (ones == 0) throw ConfigError("degenerate inpaint mask: nothing to regenerate");
  if (ones == mask.size()) throw ConfigError("degenerate inpaint mask: nothing to keep");

  const Tensor<T> z0 = model.encode_latent(source.tensor<T>());
  const auto known = known_latent_cells(mask, S, model.config.downsample);
  const std::size_t cells = known.size();
  if (trace) trace->known_cells = known;

  Rng rng(options.seed);
  auto overwrite = [&](Tensor<T>& x, std::size_t t_next) {
    const Tensor<T> eps(x.shape(), rng.normal_vector<T>(x.size()));
    const Tensor<T> noised = q_sample(schedule, z0, t_next, eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (known[i % cells]) x[i] = noised[i];
    }
    if (trace) {
      trace->t_next.push_back(t_next);
      trace->latent.push_back(x);
      trace->noise.push_back(eps);
    }
  };
  const Tensor<T> z = sample_latent<T>(model, schedule, prompt, options, rng, overwrite);
  ImageTensor out = decode_to_image(model, z);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < S * S; ++p) {
      if (mask[p] == 0) out.values[c * S * S + p] = source.values[c * S * S + p];
    }
  return out;
}

#define GARDEN_INSTANTIATE(T)                                                                                       \
  template Tensor<T> q_sample(const NoiseSchedule&, const Tensor<T>&, std::size_t, const Tensor<T>&);             \
  template Var<T> noise_prediction_loss(const NoiseSchedule&, const std::vector<Tensor<T>>&,                      \
                                        const std::vector<std::size_t>&, const std::vector<Tensor<T>>&,           \
                                        const NoisePredictor<T>&);                                                \
  template Tensor<T> ddpm_step(const NoiseSchedule&, const Tensor<T>&, const Tensor<T>&, std::size_t,             \
                               const Tensor<T>&, std::optional<std::size_t>);                                     \
  template Tensor<T> pndm_transfer(const NoiseSchedule&, const Tensor<T>&, const Tensor<T>&, std::size_t,         \
                                   std::size_t);                                                                  \
  template Tensor<T> plms_combine(const std::deque<Tensor<T>>&);                                                  \
  template class PndmRun<T>;                                                                                      \
  template Tensor<T> sample_latent(const LatentDiffusion<T>&, const NoiseSchedule&, const std::string&,           \
                                   const SampleOptions&, Rng&, const std::function<void(Tensor<T>&, std::size_t)>&); \
  template ImageTensor sample(const LatentDiffusion<T>&, const NoiseSchedule&, const std::string&,                \
                              const SampleOptions&);                                                              \
  template ImageTensor inpaint(const LatentDiffusion<T>&, const NoiseSchedule&, const ImageTensor&,               \
                               const std::vector<std::uint8_t>&, const std::string&, const SampleOptions&,        \
                               InpaintTrace<T>*);

GARDEN_INSTANTIATE(float)
GARDEN_INSTANTIATE(double)

}  // namespace garden
