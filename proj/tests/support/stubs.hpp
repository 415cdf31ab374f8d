#pragma once

#include "despoof/denoiser.hpp"
#include "despoof/ops.hpp"

namespace despoof::testing {

/// eps_hat = 0 everywhere.
template <class T>
class ZeroStub final : public NoisePredictor<T> {
 public:
  Var<T> forward(const Var<T>& x_t, std::span<const int>) const override {
    return Var<T>(BasicTensor<T>::zeros(x_t.shape()));
  }
};

/// For x0 = 0 the noisy sample is sqrt(1 - a) eps, so eps is recoverable exactly.
template <class T>
class ZeroImageOracle final : public NoisePredictor<T> {
 public:
  explicit ZeroImageOracle(const NoiseSchedule& s) : s_(s) {}
  Var<T> forward(const Var<T>& x_t, std::span<const int> t) const override {
    std::vector<T> k;
    for (int v : t) k.push_back(static_cast<T>(1.0 / std::sqrt(1.0 - s_.alpha_bar(v))));
    return scale_batch(x_t, k);
  }

 private:
  NoiseSchedule s_;
};

/// Two-parameter model eps_hat = a * x_t + b.
class AffineToy final : public NoisePredictor<double> {
 public:
  Var<double> a{Tensor({1, 1, 1, 1}, 0.3), true};
  Var<double> b{Tensor({1}, -0.1), true};
  Var<double> forward(const Var<double>& x_t, std::span<const int>) const override {
    const auto& s = x_t.shape();
    auto flat = reshape(x_t, Shape{s[0] * s[1], 1, s[2], s[3]});
    return reshape(add_channel_bias(conv2d(flat, a, 1, 0), b), s);
  }
};

}  // namespace despoof::testing
