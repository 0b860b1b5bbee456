#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "garden/image.hpp"
#include "garden/networks.hpp"

namespace garden {

/// Per-timestep tables indexed 0..T. Index 0 is the clean state:
/// betas[0] = 0, alphas[0] = 1, alpha_bars[0] = 1.
struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
};

/// Betas linearly spaced from beta_start (t=1) to beta_end (t=T) inclusive.
/// ConfigError unless 0 < beta_start <= beta_end < 1 and T >= 2.
NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end);

/// The T=1000, 1e-4 -> 0.02 schedule with both betas multiplied by 1000/T,
/// which keeps the final alpha_bar near 4e-5 for shorter chains.
NoiseSchedule make_scaled_schedule(std::size_t T);

/// sqrt(alpha_bars[t]) x0 + sqrt(1 - alpha_bars[t]) eps for 0 <= t <= T.
/// t = 0 returns x0 itself. IndexError outside that range.
template <typename T>
Tensor<T> q_sample(const NoiseSchedule& s, const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps);

/// Predicts noise for z_t at 1-based timestep t for batch element `index`.
template <typename T>
using NoisePredictor = std::function<Var<T>(const Var<T>& z_t, std::size_t t, std::size_t index)>;

/// Mean squared error between eps and predictor(q_sample(z0, t, eps), t)
/// averaged over every element of the batch. A non-finite per-sample loss
/// throws NumericsError naming the timestep and the batch index.
template <typename T>
Var<T> noise_prediction_loss(const NoiseSchedule& s, const std::vector<Tensor<T>>& z0s,
                             const std::vector<std::size_t>& ts, const std::vector<Tensor<T>>& epss,
                             const NoisePredictor<T>& predictor);

/// Reverse step from t to t_prev (default t - 1):
/// x_prev = (x_t - (beta / sqrt(1 - abar_t)) eps_hat) / sqrt(alpha) + sqrt(beta) z
/// with alpha = abar_t / abar_prev and beta = 1 - alpha. The step that lands
/// on t_prev = 0 must have z = 0 (StateError otherwise).
template <typename T>
Tensor<T> ddpm_step(const NoiseSchedule& s, const Tensor<T>& x_t, const Tensor<T>& eps_hat, std::size_t t,
                    const Tensor<T>& z, std::optional<std::size_t> t_prev = std::nullopt);

/// Pseudo-numerical transfer from t to t_next given an effective noise eps.
template <typename T>
Tensor<T> pndm_transfer(const NoiseSchedule& s, const Tensor<T>& x, const Tensor<T>& eps, std::size_t t,
                        std::size_t t_next);

/// (55 e0 - 59 e1 + 37 e2 - 9 e3) / 24 with e0 the newest entry.
template <typename T>
Tensor<T> plms_combine(const std::deque<Tensor<T>>& newest_first);

/// Noise prediction at a 1-based timestep.
template <typename T>
using EpsFn = std::function<Tensor<T>(const Tensor<T>& x, std::size_t t)>;

/// Ordered PNDM sampler state. The first 3 transitions are pseudo
/// Runge-Kutta steps (4 predictions each: at t, twice at the midpoint, at
/// t_next); afterwards each transition makes one prediction and combines it
/// with the 3 previous ones by linear multistep. The history keeps the raw
/// prediction at each visited main timestep, newest first, at most 4.
template <typename T>
class PndmRun {
 public:
  static constexpr std::size_t kWarmupTransitions = 3;

  explicit PndmRun(const NoiseSchedule& schedule) : schedule_(&schedule) {}

  /// StateError unless t > t_next and t continues the previous transition.
  Tensor<T> step(const Tensor<T>& x, std::size_t t, std::size_t t_next, const EpsFn<T>& eps);

  const std::deque<Tensor<T>>& history() const { return history_; }
  std::size_t transitions() const { return transitions_; }

 private:
  const NoiseSchedule* schedule_;
  std::deque<Tensor<T>> history_;
  std::size_t transitions_ = 0;
  std::optional<std::size_t> expected_t_;
};

/// Strictly decreasing timesteps T, T - k, ... with k = floor(T / steps);
/// `steps` entries. Each one is followed by the next, and the last by 0.
std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps);

enum class SamplerKind { Ddpm, Pndm };
SamplerKind parse_sampler(const std::string& name);
const char* sampler_name(SamplerKind kind);

struct SampleOptions {
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  SamplerKind sampler = SamplerKind::Pndm;
  double guidance_scale = 1.0;
};

/// Records the latent right after each known-region overwrite, with the
/// noise drawn for it, so the overwrite contract can be audited.
template <typename T>
struct InpaintTrace {
  std::vector<std::size_t> t_next;
  std::vector<Tensor<T>> latent;
  std::vector<Tensor<T>> noise;
  std::vector<std::uint8_t> known_cells;  // latent_side^2, 1 = known
};

/// Runs a sampler over a latent. `after_step(x, t_next)` runs after every
/// transition and may overwrite x (used by inpainting).
template <typename T>
Tensor<T> sample_latent(const LatentDiffusion<T>& model, const NoiseSchedule& schedule, const std::string& prompt,
                        const SampleOptions& options, Rng& rng,
                        const std::function<void(Tensor<T>&, std::size_t)>& after_step = {});

/// Text-to-image: latent sampling, unscale, decode, clamp to [-1, 1].
template <typename T>
ImageTensor sample(const LatentDiffusion<T>& model, const NoiseSchedule& schedule, const std::string& prompt,
                   const SampleOptions& options);

/// A latent cell is known when a strict majority of its f x f pixels have
/// mask 0. `mask` is S x S with 1 = regenerate.
std::vector<std::uint8_t> known_latent_cells(const std::vector<std::uint8_t>& mask, std::size_t side,
                                             std::size_t factor);

/// Regenerates mask = 1 pixels of `source`. ConfigError for a mask that is
/// not binary, has the wrong size, or is all zeros / all ones.
template <typename T>
ImageTensor inpaint(const LatentDiffusion<T>& model, const NoiseSchedule& schedule, const ImageTensor& source,
                    const std::vector<std::uint8_t>& mask, const std::string& prompt, const SampleOptions& options,
                    InpaintTrace<T>* trace = nullptr);

}  // namespace garden
