#include "despoof/diffusion.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "despoof/adam.hpp"
#include "despoof/ops.hpp"
#include "despoof/rng.hpp"

namespace despoof {

template <class T>
Var<T> ddpm_loss(const NoisePredictor<T>& model, std::span<const BasicTensor<T>> batch, const NoiseSchedule& schedule,
                 std::uint64_t rng_seed) {
  if (batch.empty()) throw std::invalid_argument("ddpm_loss: empty batch");
  Rng rng(rng_seed);
  std::vector<int> steps(batch.size());
  std::vector<BasicTensor<T>> noisy, noise;
  noisy.reserve(batch.size());
  noise.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    steps[i] = static_cast<int>(rng.uniform_int(1, schedule.steps()));
    noise.push_back(rng.normal_tensor<T>(batch[i].shape()));
    noisy.push_back(perturb(batch[i], steps[i], noise.back(), schedule));
  }
  auto pred = model.forward(Var<T>(stack(noisy)), steps);
  return mse(pred, Var<T>(stack(noise)));
}

std::vector<int> ode_step_sequence(const NoiseSchedule& schedule, double u0, double u1, int steps) {
  if (u0 == u1) throw std::invalid_argument("ode_map: u0 and u1 must differ");
  if (steps < 1) throw std::invalid_argument("ode_map: steps must be >= 1");
  const int t0 = schedule.to_step(u0);
  const int t1 = schedule.to_step(u1);
  const int span = std::abs(t1 - t0);
  if (span == 0) throw std::invalid_argument("ode_map: u0 and u1 map to the same discrete step");
  if (steps > span) {
    spdlog::warn("ode_map: {} steps requested over a span of {}; clamping", steps, span);
    steps = span;
  }
  std::vector<int> seq(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) {
    seq[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lround(t0 + static_cast<double>(t1 - t0) * i / static_cast<double>(steps)));
  }
  return seq;
}

template <class T>
BasicTensor<T> ode_map(const BasicTensor<T>& x, const NoisePredictor<T>& model, const NoiseSchedule& schedule,
                       double u0, double u1, int steps) {
  const auto seq = ode_step_sequence(schedule, u0, u1, steps);
  BasicTensor<T> cur = x;
  for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
    const int a = seq[k], b = seq[k + 1];
    const double ab_a = schedule.alpha_bar(a);
    const double ab_b = schedule.alpha_bar(b);
    // Training never samples t = 0, so the first encoding step queries the
    // model at t = 1 (alpha_bar_1 ~ 1) instead of extrapolating.
    const auto eps = model.predict(cur, std::max(a, 1));
    const T sa = static_cast<T>(std::sqrt(ab_a)), na = static_cast<T>(std::sqrt(1.0 - ab_a));
    const T sb = static_cast<T>(std::sqrt(ab_b)), nb = static_cast<T>(std::sqrt(1.0 - ab_b));
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const T x0_hat = (cur[i] - na * eps[i]) / sa;
      cur[i] = sb * x0_hat + nb * eps[i];
    }
  }
  return cur;
}

template <class T>
DespoofResult<T> despoof(const BasicTensor<T>& x_s, const BasicDenoiserParams<T>& params_s,
                         const BasicDenoiserParams<T>& params_g, const NoiseSchedule& schedule, int steps) {
  if (params_s.domain_tag() != DomainTag::spoof_union) {
    throw std::invalid_argument("despoof: encoder model must be tagged spoof_union, got " +
                                to_string(params_s.domain_tag()));
  }
  if (params_g.domain_tag() != DomainTag::genuine_only) {
    throw std::invalid_argument("despoof: decoder model must be tagged genuine_only, got " +
                                to_string(params_g.domain_tag()));
  }
  auto latent = ode_map(x_s, params_s, schedule, 0.0, 1.0, steps);
  auto x_g = ode_map(latent, params_g, schedule, 1.0, 0.0, steps);
  BasicNoisePattern<T> noise{BasicTensor<T>(x_s.shape())};
  for (std::size_t i = 0; i < x_g.size(); ++i) {
    x_g[i] = std::clamp(x_g[i], T{-1}, T{1});
    noise.map[i] = std::abs(x_s[i] - x_g[i]);
  }
  return {std::move(x_g), std::move(noise)};
}

double roundtrip_mse(const NoisePredictor<float>& model, const NoiseSchedule& schedule,
                     std::span<const TensorF> images, int steps) {
  if (images.empty()) throw std::invalid_argument("roundtrip_mse: no images");
  const auto x = stack(images);
  const auto latent = ode_map(x, model, schedule, 0.0, 1.0, steps);
  const auto back = ode_map(latent, model, schedule, 1.0, 0.0, steps);
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(back[i]) - static_cast<double>(x[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

DiffusionTrainLog train_diffusion(DenoiserParams& model, std::span<const TensorF> images, const NoiseSchedule& schedule,
                                  const DiffusionTrainConfig& cfg, std::span<const TensorF> holdout,
                                  const std::function<void(int, double)>& on_step) {
  if (images.empty()) throw std::invalid_argument("train_diffusion: no training images");
  if (cfg.batch_size < 1 || cfg.max_steps < 0 || cfg.decay_every < 0) {
    throw std::invalid_argument("train_diffusion: bad budget");
  }
  AdamHyper hyper;
  hyper.learning_rate = cfg.learning_rate;
  hyper.weight_decay = cfg.weight_decay;
  AdamOptimizer<float> opt(model.layers().vars(), hyper);
  Rng order_rng(derive_seed(cfg.seed, "diffusion.batches"));
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  DiffusionTrainLog log;
  const auto batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), images.size());
  for (int step = 0; step < cfg.max_steps; ++step) {
    std::vector<TensorF> xb;
    xb.reserve(batch);
    while (xb.size() < batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng.engine());
        cursor = 0;
      }
      xb.push_back(images[order[cursor++]]);
    }
    if (cfg.decay_every > 0) {
      opt.set_learning_rate(step_decay_lr(cfg.learning_rate, static_cast<std::uint64_t>(step),
                                          static_cast<std::uint64_t>(cfg.decay_every), cfg.decay_factor));
    }
    opt.zero_grad();
    auto loss = ddpm_loss<float>(model, xb, schedule, derive_seed(cfg.seed, "diffusion.noise", step));
    loss.backward();
    opt.step();
    const double l = loss.value().item();
    log.losses.push_back(l);
    log.steps_run = step + 1;
    if (on_step) on_step(step, l);

    const bool last = step + 1 == cfg.max_steps;
    if (!holdout.empty() && cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last)) {
      const double rt = roundtrip_mse(model, schedule, holdout, cfg.eval_ode_steps);
      log.roundtrip_mse.emplace_back(step + 1, rt);
      spdlog::info("diffusion step {}: loss {:.5f}, round-trip mse {:.6f}", step + 1, l, rt);
      if (rt < cfg.target_roundtrip_mse) break;
    }
  }
  return log;
}

template Var<float> ddpm_loss(const NoisePredictor<float>&, std::span<const BasicTensor<float>>, const NoiseSchedule&,
                              std::uint64_t);
template Var<double> ddpm_loss(const NoisePredictor<double>&, std::span<const BasicTensor<double>>,
                               const NoiseSchedule&, std::uint64_t);
template BasicTensor<float> ode_map(const BasicTensor<float>&, const NoisePredictor<float>&, const NoiseSchedule&,
                                    double, double, int);
template BasicTensor<double> ode_map(const BasicTensor<double>&, const NoisePredictor<double>&, const NoiseSchedule&,
                                     double, double, int);
template DespoofResult<float> despoof(const BasicTensor<float>&, const BasicDenoiserParams<float>&,
                                      const BasicDenoiserParams<float>&, const NoiseSchedule&, int);
template DespoofResult<double> despoof(const BasicTensor<double>&, const BasicDenoiserParams<double>&,
                                       const BasicDenoiserParams<double>&, const NoiseSchedule&, int);

}  // namespace despoof
