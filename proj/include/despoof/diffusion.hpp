#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "despoof/denoiser.hpp"
#include "despoof/schedule.hpp"

namespace despoof {

/// Elementwise |x_s - x_g|, same shape as the source image; all entries >= 0.
template <class T>
struct BasicNoisePattern {
  BasicTensor<T> map;

  /// Mean absolute residual, the scalar energy view of the pattern.
  T energy() const { return map.mean(); }
};
using NoisePattern = BasicNoisePattern<float>;

/// mean over batch and pixels of (eps_model(x_t, t) - eps)^2, with t ~ U{1..T}
/// and eps ~ N(0, I) drawn per sample from rng_seed.
template <class T>
Var<T> ddpm_loss(const NoisePredictor<T>& model, std::span<const BasicTensor<T>> batch, const NoiseSchedule& schedule,
                 std::uint64_t rng_seed);

/// Discrete steps visited by ode_map between round(u0 T) and round(u1 T).
/// The step count is clamped to |t1 - t0|.
std::vector<int> ode_step_sequence(const NoiseSchedule& schedule, double u0, double u1, int steps);

/// Deterministic DDIM map from normalized time u0 to u1. Per step a -> b:
///   x0_hat = (x - sqrt(1 - ab_a) eps) / sqrt(ab_a)
///   x'     = sqrt(ab_b) x0_hat + sqrt(1 - ab_b) eps,   eps = model(x, max(a, 1))
/// u0 < u1 encodes towards noise, u0 > u1 decodes. x: [C,H,W] or [B,C,H,W].
template <class T>
BasicTensor<T> ode_map(const BasicTensor<T>& x, const NoisePredictor<T>& model, const NoiseSchedule& schedule,
                       double u0, double u1, int steps);

template <class T>
struct DespoofResult {
  BasicTensor<T> genuine;  // x_g, clamped to [-1, 1]
  BasicNoisePattern<T> noise;
};

/// Encodes with the spoof-union model to the latent at u = 1, decodes with
/// the genuine-only model, and returns the residual. Accepts batches.
template <class T>
DespoofResult<T> despoof(const BasicTensor<T>& x_s, const BasicDenoiserParams<T>& params_s,
                         const BasicDenoiserParams<T>& params_g, const NoiseSchedule& schedule, int steps = 50);

struct DiffusionTrainConfig {
  int max_steps = 1500;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  // Step decay lr * factor^(step / decay_every); 0 keeps the rate constant.
  int decay_every = 0;
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  // Early stop once the held-out round-trip MSE falls below the target.
  int eval_every = 250;
  int eval_ode_steps = 50;
  double target_roundtrip_mse = 0.0;
};

struct DiffusionTrainLog {
  std::vector<double> losses;                          // one per optimizer step
  std::vector<std::pair<int, double>> roundtrip_mse;   // (step, mse) at each evaluation
  int steps_run = 0;
};

/// Per-pixel MSE of ode_map(ode_map(x, 0 -> 1), 1 -> 0) against x.
double roundtrip_mse(const NoisePredictor<float>& model, const NoiseSchedule& schedule,
                     std::span<const TensorF> images, int steps);

DiffusionTrainLog train_diffusion(DenoiserParams& model, std::span<const TensorF> images, const NoiseSchedule& schedule,
                                  const DiffusionTrainConfig& cfg, std::span<const TensorF> holdout = {},
                                  const std::function<void(int, double)>& on_step = {});

}  // namespace despoof
