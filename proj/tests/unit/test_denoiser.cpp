#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "despoof/denoiser.hpp"
#include "despoof/ops.hpp"
#include "despoof/rng.hpp"
#include "grad_support.hpp"

using namespace despoof;

namespace {

DenoiserConfig tiny() {
  DenoiserConfig c;
  c.image_size = 8;
  c.base_width = 4;
  c.time_embed_dim = 8;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("time embedding") {
  const auto e = time_embedding<double>(7, 4);
  // pairs (sin, cos) of 7 / 10000^(2i/4) for i = 0, 1
  CHECK(e[0] == doctest::Approx(0.6569865987187891).epsilon(1e-14));
  CHECK(e[1] == doctest::Approx(0.7539022543433046).epsilon(1e-14));
  CHECK(e[2] == doctest::Approx(0.06994284733753277).epsilon(1e-14));
  CHECK(e[3] == doctest::Approx(0.9975510002532796).epsilon(1e-14));
  const auto z = time_embedding<double>(0, 6);
  CHECK(z == Tensor({6}, std::vector<double>{0, 1, 0, 1, 0, 1}));
  const auto big = time_embedding<double>(999, 64);
  for (double v : big.vec()) CHECK(std::abs(v) <= 1.0);
  CHECK_THROWS_AS(time_embedding<double>(1, 5), std::invalid_argument);
  CHECK_THROWS_AS(time_embedding<double>(-1, 4), std::invalid_argument);
}

TEST_CASE("parameter count for the default config") {
  const DenoiserConfig c;
  // hand count of the layer formulas for width 32, 2 levels, time dim 64
  CHECK(denoiser_param_count(c) == 706563);
  CHECK(init_denoiser<float>(c).layers().scalar_count() == 706563);
  CHECK(init_denoiser<float>(tiny()).layers().scalar_count() == denoiser_param_count(tiny()));
}

TEST_CASE("init is seeded") {
  const auto a = init_denoiser<double>(tiny());
  const auto b = init_denoiser<double>(tiny());
  auto other = tiny();
  other.seed = 4;
  const auto c = init_denoiser<double>(other);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    all_same &= a.layers().entries()[i].second.value() == b.layers().entries()[i].second.value();
    any_diff |= !(a.layers().entries()[i].second.value() == c.layers().entries()[i].second.value());
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("invalid configs are rejected") {
  auto c = tiny();
  c.image_size = 6;  // not divisible by 4
  CHECK_THROWS_AS(init_denoiser<float>(c), std::invalid_argument);
  c = tiny();
  c.base_width = 0;
  CHECK_THROWS_AS(init_denoiser<float>(c), std::invalid_argument);
  c = tiny();
  c.time_embed_dim = 7;
  CHECK_THROWS_AS(init_denoiser<float>(c), std::invalid_argument);
}

TEST_CASE("predict_eps shape, determinism and init magnitude") {
  const auto m = init_denoiser<float>(DenoiserConfig{});
  Rng rng(11);
  const auto x = rng.normal_tensor<float>({3, 32, 32});
  const auto y1 = predict_eps(m, x, 500);
  const auto y2 = predict_eps(m, x, 500);
  CHECK(y1.shape() == x.shape());
  CHECK(y1 == y2);
  CHECK(std::abs(y1.mean()) < 0.1);
  CHECK(y1.all_finite());
  CHECK_THROWS_AS(predict_eps(m, rng.normal_tensor<float>({3, 16, 16}), 5), std::invalid_argument);
  CHECK_THROWS_AS(predict_eps(m, rng.normal_tensor<float>({1, 32, 32}), 5), std::invalid_argument);
}

TEST_CASE("batched forward equals per-sample prediction") {
  const auto m = init_denoiser<double>(tiny());
  Rng rng(12);
  const auto x = rng.normal_tensor<double>({2, 3, 8, 8});
  const std::vector<int> t{10, 800};
  const auto y = m.forward(Var<double>(x), t).value();
  for (std::size_t b = 0; b < 2; ++b) {
    const auto single = predict_eps(m, x.slice0(b), t[b]);
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(y.slice0(b)[i] == doctest::Approx(single[i]).epsilon(1e-12));
  }
}

TEST_CASE("skip connections are live") {
  const auto m = init_denoiser<double>(tiny());
  Rng rng(13);
  Var<double> x(rng.normal_tensor<double>({1, 3, 8, 8}));
  const std::vector<int> t{100};
  const auto a = m.forward(x, t).value();
  const auto b = m.forward(x, t, DenoiserForwardOptions{true}).value();
  CHECK_FALSE(a == b);
}

TEST_CASE("gradient of sum(eps^2) on sampled parameters") {
  for (double sd : {0.0, 0.5}) {
    auto c = tiny();
    c.sigma_data = sd;
    const auto m = init_denoiser<double>(c);
    Rng rng(14);
    Var<double> x(rng.normal_tensor<double>({2, 3, 8, 8}));
    const std::vector<int> t{30, 700};
    const auto loss = [&] { return sum(square(m.forward(x, t))); };
    for (const auto& name : {"in.w", "out.w", "out.b"}) {
      CAPTURE(name);
      CAPTURE(sd);
      const auto& p = m.layers()[name];
      std::vector<std::size_t> coords;
      for (std::size_t i = 0; i < p.value().size() && coords.size() < 6; i += 7) coords.push_back(i);
      CHECK(despoof::testing::grad_rel_error(p, loss, 1e-6, coords) < 1e-3);
    }
  }
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto dir = std::filesystem::temp_directory_path() / "despoof_unit_denoiser";
  std::filesystem::create_directories(dir);
  const auto schedule = build_linear_schedule(200, 2e-4, 0.03);
  const auto m = init_denoiser<float>(tiny(), DomainTag::genuine_only, schedule);
  const auto p1 = (dir / "a.dspd").string(), p2 = (dir / "b.dspd").string();
  save_denoiser(p1, m, schedule);
  const auto loaded = load_denoiser(p1);
  CHECK(loaded.params.domain_tag() == DomainTag::genuine_only);
  CHECK(loaded.params.config() == m.config());
  CHECK(loaded.schedule.alpha_bars() == schedule.alpha_bars());
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    CHECK(loaded.params.layers().entries()[i].second.value() == m.layers().entries()[i].second.value());
  }
  save_denoiser(p2, loaded.params, loaded.schedule);
  const auto read = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  CHECK(read(p1) == read(p2));
  CHECK(read(p1).substr(0, 4) == "DSPD");
  std::filesystem::remove_all(dir);
}

TEST_CASE("domain tags") {
  CHECK(parse_domain_tag(to_string(DomainTag::spoof_union)) == DomainTag::spoof_union);
  CHECK(parse_domain_tag(to_string(DomainTag::genuine_only)) == DomainTag::genuine_only);
  CHECK_THROWS(parse_domain_tag("both"));
  const auto m = init_denoiser<float>(tiny());
  const auto g = m.retagged(DomainTag::genuine_only);
  CHECK(g.domain_tag() == DomainTag::genuine_only);
  CHECK(g.layers()["in.w"].value() == m.layers()["in.w"].value());
  CHECK(g.layers()["in.w"].node() != m.layers()["in.w"].node());
}
