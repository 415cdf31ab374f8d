#include <doctest.h>

#include "despoof/diffusion.hpp"
#include "despoof/rng.hpp"
#include "grad_support.hpp"
#include "stubs.hpp"

using namespace despoof;
using namespace despoof::testing;

TEST_CASE("ddpm_loss of an exact predictor is zero") {
  const auto s = build_linear_schedule();
  const std::vector<Tensor> batch(4, Tensor({3, 8, 8}, 0.0));
  const ZeroImageOracle<double> oracle(s);
  CHECK(ddpm_loss<double>(oracle, batch, s, 5).value().item() < 1e-24);
}

TEST_CASE("ddpm_loss of the zero predictor is E[eps^2] = 1") {
  const auto s = build_linear_schedule();
  Rng rng(1);
  std::vector<Tensor> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(rng.uniform_tensor<double>({3, 16, 16}, -1, 1));  // 12288 draws
  const ZeroStub<double> zero;
  const double l = ddpm_loss<double>(zero, batch, s, 9).value().item();
  CHECK(l == doctest::Approx(1.0).epsilon(0.05));
  CHECK_THROWS_AS(ddpm_loss<double>(zero, std::span<const Tensor>{}, s, 9), std::invalid_argument);
}

TEST_CASE("ddpm_loss is nonnegative and seeded") {
  const auto s = build_linear_schedule();
  DenoiserConfig c;
  c.image_size = 8;
  c.base_width = 4;
  c.time_embed_dim = 8;
  const auto m = init_denoiser<float>(c);
  Rng rng(2);
  std::vector<TensorF> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(rng.uniform_tensor<float>({3, 8, 8}, -1, 1));
  const auto a = ddpm_loss<float>(m, batch, s, 77).value().item();
  CHECK(a >= 0);
  CHECK(a == ddpm_loss<float>(m, batch, s, 77).value().item());
  CHECK(a != ddpm_loss<float>(m, batch, s, 78).value().item());
}

TEST_CASE("ddpm_loss gradient on a two-parameter toy") {
  const auto s = build_linear_schedule();
  Rng rng(3);
  std::vector<Tensor> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(rng.uniform_tensor<double>({3, 4, 4}, -1, 1));
  AffineToy toy;
  const auto loss = [&] { return ddpm_loss<double>(toy, batch, s, 11); };
  CHECK(grad_rel_error(toy.a, loss) < 1e-4);
  CHECK(grad_rel_error(toy.b, loss) < 1e-4);
}

TEST_CASE("ode_step_sequence") {
  const auto s = build_linear_schedule();
  const auto up = ode_step_sequence(s, 0, 1, 50);
  REQUIRE(up.size() == 51);
  CHECK(up.front() == 0);
  CHECK(up[1] == 20);
  CHECK(up.back() == 1000);
  const auto down = ode_step_sequence(s, 1, 0, 3);
  CHECK(down == std::vector<int>{1000, 667, 333, 0});
  // more steps than the span is clamped
  CHECK(ode_step_sequence(s, 0, 0.003, 10) == std::vector<int>{0, 1, 2, 3});
  CHECK_THROWS_AS(ode_step_sequence(s, 0.5, 0.5, 10), std::invalid_argument);
  CHECK_THROWS_AS(ode_step_sequence(s, 0, 1, 0), std::invalid_argument);
}

TEST_CASE("ode_map with the zero stub is the closed form") {
  const auto s = build_linear_schedule();
  Rng rng(4);
  const auto x = rng.normal_tensor<double>({2, 3, 4, 4});
  const ZeroStub<double> zero;
  for (int steps : {1, 10, 50}) {
    for (auto [u0, u1] : {std::pair{0.0, 1.0}, std::pair{1.0, 0.0}, std::pair{0.2, 0.7}}) {
      const auto y = ode_map(x, zero, s, u0, u1, steps);
      const double k = std::sqrt(s.alpha_bar(s.to_step(u1)) / s.alpha_bar(s.to_step(u0)));
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - k * x[i]) < 1e-10 * std::max(1.0, std::abs(k * x[i])));
    }
  }
}

TEST_CASE("ode_map and despoof are deterministic") {
  const auto s = build_linear_schedule();
  DenoiserConfig c;
  c.image_size = 8;
  c.base_width = 4;
  c.time_embed_dim = 8;
  const auto ms = init_denoiser<float>(c, DomainTag::spoof_union);
  c.seed = 1;
  const auto mg = init_denoiser<float>(c, DomainTag::genuine_only);
  Rng rng(5);
  const auto x = rng.uniform_tensor<float>({3, 8, 8}, -1, 1);
  CHECK(ode_map(x, ms, s, 0, 1, 10) == ode_map(x, ms, s, 0, 1, 10));
  const auto a = despoof::despoof(x, ms, mg, s, 10);
  const auto b = despoof::despoof(x, ms, mg, s, 10);
  CHECK(a.genuine == b.genuine);
  CHECK(a.noise.map == b.noise.map);
  CHECK(a.noise.map.shape() == x.shape());
  for (float v : a.noise.map.vec()) CHECK(v >= 0);
  for (float v : a.genuine.vec()) CHECK(std::abs(v) <= 1);
  CHECK(a.noise.energy() == doctest::Approx(a.noise.map.mean()));
  CHECK_THROWS_AS(despoof::despoof(x, mg, ms, s, 10), std::invalid_argument);
  CHECK_THROWS_AS(despoof::despoof(x, ms, ms, s, 10), std::invalid_argument);

  // batched input gives the per-image results
  const auto x2 = rng.uniform_tensor<float>({3, 8, 8}, -1, 1);
  const auto batch = despoof::despoof(stack(std::vector<TensorF>{x, x2}), ms, mg, s, 10);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(batch.noise.map.slice0(0)[i] == doctest::Approx(a.noise.map[i]).epsilon(1e-4));
}

TEST_CASE("training lowers the loss") {
  const auto s = build_linear_schedule();
  DenoiserConfig c;
  c.image_size = 8;
  c.base_width = 4;
  c.time_embed_dim = 8;
  auto m = init_denoiser<float>(c);
  Rng rng(6);
  std::vector<TensorF> images;
  for (int i = 0; i < 16; ++i) images.push_back(TensorF({3, 8, 8}, static_cast<float>(rng.uniform(-0.8, 0.8))));
  DiffusionTrainConfig tc;
  tc.max_steps = 60;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  tc.eval_every = 0;
  const auto first = ddpm_loss<float>(m, images, s, 99).value().item();
  const auto log = train_diffusion(m, images, s, tc);
  CHECK(log.steps_run == 60);
  CHECK(log.losses.size() == 60);
  CHECK(ddpm_loss<float>(m, images, s, 99).value().item() < first);
}

TEST_CASE("learning-rate step decay") {
  const auto s = build_linear_schedule();
  DenoiserConfig c;
  c.image_size = 8;
  c.base_width = 4;
  c.time_embed_dim = 8;
  Rng rng(7);
  std::vector<TensorF> images;
  for (int i = 0; i < 8; ++i) images.push_back(rng.uniform_tensor<float>({3, 8, 8}, -0.8, 0.8));
  DiffusionTrainConfig tc;
  tc.batch_size = 4;
  tc.learning_rate = 3e-3;
  tc.eval_every = 0;
  tc.decay_every = 3;
  tc.decay_factor = 0.0;  // rate is zero from step 3 on

  auto a = init_denoiser<float>(c), b = init_denoiser<float>(c);
  tc.max_steps = 3;
  train_diffusion(a, images, s, tc);
  tc.max_steps = 7;
  train_diffusion(b, images, s, tc);
  const auto& ea = a.layers().entries();
  const auto& eb = b.layers().entries();
  bool same = true;
  for (std::size_t k = 0; k < ea.size(); ++k) same &= ea[k].second.value() == eb[k].second.value();
  CHECK(same);
  CHECK_FALSE(a.layers().entries()[0].second.value() == init_denoiser<float>(c).layers().entries()[0].second.value());

  tc.decay_every = -1;
  CHECK_THROWS_AS(train_diffusion(a, images, s, tc), std::invalid_argument);
}
