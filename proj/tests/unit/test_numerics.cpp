#include <doctest.h>

#include <sstream>

#include "despoof/adam.hpp"
#include "despoof/gradcheck.hpp"
#include "despoof/ops.hpp"
#include "despoof/rng.hpp"
#include "despoof/serialize.hpp"
#include "grad_support.hpp"

using namespace despoof;
using despoof::testing::grad_rel_error;

namespace {

// y(o) = sum_n w(n) x(o*s - p + n) - theta * x(centre) * sum_n w(n), zero padded.
Tensor naive_cdc(const Tensor& x, const Tensor& w, double theta, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  const auto at = [&](std::size_t c, long r, long q) {
    return r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd) ? 0.0 : x.at({c, std::size_t(r), std::size_t(q)});
  };
  Tensor y(Shape{co, oh, ow});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < ci; ++c) {
          double wsum = 0;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              const double wv = w.at({o, c, a, b});
              wsum += wv;
              acc += wv * at(c, long(i * stride + a) - long(pad), long(j * stride + b) - long(pad));
            }
          acc -= theta * wsum * at(c, long(i * stride + k / 2) - long(pad), long(j * stride + k / 2) - long(pad));
        }
        y.at({o, i, j}) = acc;
      }
  return y;
}

}  // namespace

TEST_CASE("conv2d identity and constant cases") {
  Rng rng(1);
  const auto x = rng.normal_tensor<double>({1, 5, 5});
  const auto y = conv2d(Var<double>(x), Var<double>(Tensor({1, 1, 1, 1}, 1.0)), 1, 0).value();
  CHECK(y == x);

  const auto k = rng.normal_tensor<double>({2, 1, 3, 3});
  const auto c = conv2d(Var<double>(Tensor({1, 6, 6}, 0.5)), Var<double>(k), 1, 0).value();
  for (std::size_t o = 0; o < 2; ++o) {
    double wsum = 0;
    for (std::size_t i = 0; i < 9; ++i) wsum += k[o * 9 + i];
    for (std::size_t i = 0; i < 16; ++i) CHECK(c[o * 16 + i] == doctest::Approx(0.5 * wsum).epsilon(1e-12));
  }
}

TEST_CASE("conv2d output shape formula over a grid") {
  Rng rng(2);
  for (std::size_t h : {5, 6, 9})
    for (std::size_t k : {1, 3, 5})
      for (std::size_t s : {1, 2, 3})
        for (std::size_t p : {0, 1, 2}) {
          if (h + 2 * p < k) continue;
          const auto y = conv2d(Var<double>(rng.normal_tensor<double>({2, h, h})),
                                Var<double>(rng.normal_tensor<double>({3, 2, k, k})), s, p);
          const auto expect = (h + 2 * p - k) / s + 1;
          CHECK(y.shape() == Shape{3, expect, expect});
          CHECK(conv_out_extent(h, k, s, p) == expect);
        }
}

TEST_CASE("conv2d rejects channel mismatch and even kernels") {
  Var<double> x(Tensor({2, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor({1, 3, 3, 3})), 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor({1, 2, 2, 2})), 1, 0), std::invalid_argument);
}

TEST_CASE("conv2d gradient matches finite differences") {
  Rng rng(3);
  Var<double> x(rng.normal_tensor<double>({1, 1, 5, 5}), true);
  Var<double> w(rng.normal_tensor<double>({1, 1, 3, 3}), true);
  const auto loss = [&] { return sum(square(conv2d(x, w, 1, 1))); };
  CHECK(grad_rel_error(x, loss) < 1e-6);
  CHECK(grad_rel_error(w, loss) < 1e-6);
}

TEST_CASE("cdc2d with theta 0 is bitwise conv2d") {
  Rng rng(4);
  Var<double> x(rng.normal_tensor<double>({2, 3, 7, 7}));
  Var<double> w(rng.normal_tensor<double>({4, 3, 3, 3}));
  for (std::size_t s : {1, 2})
    for (std::size_t p : {0, 1}) CHECK(cdc2d(x, w, 0.0, s, p).value() == conv2d(x, w, s, p).value());
}

TEST_CASE("cdc2d matches a naive loop") {
  Rng rng(5);
  const auto x = rng.normal_tensor<double>({2, 6, 6});
  const auto w = rng.normal_tensor<double>({3, 2, 3, 3});
  for (std::size_t s : {1, 2})
    for (std::size_t p : {0, 1}) {
      const auto got = cdc2d(Var<double>(x), Var<double>(w), 0.7, s, p).value();
      const auto want = naive_cdc(x, w, 0.7, s, p);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("cdc2d constant input cancels to (1 - theta) c sum(w)") {
  Rng rng(6);
  const auto w = rng.normal_tensor<double>({1, 1, 3, 3});
  const auto y = cdc2d(Var<double>(Tensor({1, 6, 6}, 2.0)), Var<double>(w), 0.7, 1, 0).value();
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.3 * 2.0 * w.sum()).epsilon(1e-12));
  CHECK_THROWS_AS(cdc2d(Var<double>(Tensor({1, 6, 6})), Var<double>(w), 1.5, 1, 0), std::invalid_argument);
}

TEST_CASE("cdc2d gradient matches finite differences") {
  Rng rng(7);
  Var<double> x(rng.normal_tensor<double>({2, 2, 6, 6}), true);
  Var<double> w(rng.normal_tensor<double>({3, 2, 3, 3}), true);
  const auto loss = [&] { return sum(square(cdc2d(x, w, 0.7, 2, 1))); };
  CHECK(grad_rel_error(x, loss) < 1e-6);
  CHECK(grad_rel_error(w, loss) < 1e-6);
}

TEST_CASE("elementwise and structural ops have correct gradients") {
  Rng rng(8);
  Var<double> a(rng.normal_tensor<double>({2, 2, 4, 4}), true);
  Var<double> b(rng.normal_tensor<double>({2, 2, 4, 4}), true);
  Var<double> bias(rng.normal_tensor<double>({2}), true);
  Var<double> shift(rng.normal_tensor<double>({2, 2}), true);
  const std::vector<std::function<Var<double>()>> losses = {
      [&] { return sum(mul(add(a, b), sub(a, b))); },
      [&] { return mean(square(silu(a))); },
      [&] { return sum(mul(sigmoid(a), b)); },
      [&] { return sum(mul(relu(a), b)); },
      [&] { return mse(scale(a, 0.3), add_scalar(b, 0.1)); },
      [&] { return sum(mul(max_pool2(a), max_pool2(b))); },
      [&] { return sum(square(upsample_nearest2(a))); },
      [&] { return sum(square(resize_bilinear(a, 7, 5))); },
      [&] { return sum(square(add_channel_bias(a, bias))); },
      [&] { return sum(square(add_channel_shift(a, shift))); },
      [&] { return sum(square(concat_channels(a, b))); },
      [&] { return sum(square(scale_batch(a, {0.5, -2.0}))); },
  };
  for (std::size_t i = 0; i < losses.size(); ++i) {
    CAPTURE(i);
    CHECK(grad_rel_error(a, losses[i]) < 1e-6);
  }
  CHECK(grad_rel_error(bias, losses[8]) < 1e-6);
  CHECK(grad_rel_error(shift, losses[9]) < 1e-6);
}

TEST_CASE("linear layer gradient") {
  Rng rng(9);
  Var<double> x(rng.normal_tensor<double>({3, 4}), true);
  Var<double> w(rng.normal_tensor<double>({5, 4}), true);
  Var<double> bias(rng.normal_tensor<double>({5}), true);
  const auto loss = [&] { return sum(square(linear(x, w, bias))); };
  CHECK(grad_rel_error(x, loss) < 1e-6);
  CHECK(grad_rel_error(w, loss) < 1e-6);
  CHECK(grad_rel_error(bias, loss) < 1e-6);
}

TEST_CASE("finite_diff_grad basics") {
  const auto quad = [](const Tensor& p) { return p[0] * p[0] + p[1] * p[1]; };
  const auto g = finite_diff_grad<double>(quad, Tensor({2}, std::vector<double>{1, 2}), 1e-5);
  CHECK(std::abs(g[0] - 2) < 1e-8);
  CHECK(std::abs(g[1] - 4) < 1e-8);
  const auto z = finite_diff_grad<double>([](const Tensor&) { return 3.0; }, Tensor({3}, 1.0), 1e-5);
  CHECK(z == Tensor({3}, 0.0));
  CHECK_THROWS_AS(finite_diff_grad<double>([](const Tensor&) { return std::nan(""); }, Tensor({1}), 1e-5),
                  std::domain_error);
}

TEST_CASE("adam first step") {
  AdamHyper h;
  h.learning_rate = 0.1;
  h.weight_decay = 0;
  auto [p, st] = adam_step(Tensor({1}, 1.0), Tensor({1}, 1.0), AdamState<double>::fresh({1}, h));
  // m_hat = 1, v_hat = 1: p' = 1 - 0.1 / (1 + 1e-8)
  CHECK(p[0] == doctest::Approx(0.900000001).epsilon(1e-12));
  CHECK(st.step_count == 1);

  auto [q, st2] = adam_step(Tensor({2}, 0.7), Tensor({2}, 0.0), AdamState<double>::fresh({2}, h));
  CHECK(q == Tensor({2}, 0.7));
  auto [r1, s1] = adam_step(Tensor({2}, 0.3), Tensor({2}, -0.2), AdamState<double>::fresh({2}, h));
  auto [r2, s2] = adam_step(Tensor({2}, 0.3), Tensor({2}, -0.2), AdamState<double>::fresh({2}, h));
  CHECK(r1 == r2);
  CHECK(r1[0] == r1[1]);
  CHECK_THROWS_AS(adam_step(Tensor({2}), Tensor({3}), AdamState<double>::fresh({2}, h)), std::invalid_argument);
}

TEST_CASE("adam weight decay enters the gradient") {
  AdamHyper h;
  h.learning_rate = 0.1;
  h.weight_decay = 0.5;
  // g = 0 + 0.5 * 2 = 1, so the first step is again -lr
  auto [p, st] = adam_step(Tensor({1}, 2.0), Tensor({1}, 0.0), AdamState<double>::fresh({1}, h));
  CHECK(p[0] == doctest::Approx(1.900000001).epsilon(1e-12));
  CHECK(step_decay_lr(1e-4, 999, 500, 0.1) == doctest::Approx(1e-5));
}

TEST_CASE("tensor serialization round trips bitwise") {
  Rng rng(10);
  const auto t = rng.normal_tensor<float>({2, 3, 4});
  std::stringstream ss;
  write_tensor(ss, t);
  const auto bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "DSPT");
  const auto back = read_tensor(ss);
  CHECK(back == t);
  std::stringstream again;
  write_tensor(again, back);
  CHECK(again.str() == bytes);
  std::stringstream bad(std::string("XXXX") + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor(bad), FormatError);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK(format_double(0.1) == "0.1");
  CHECK(parse_double(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}
