#pragma once

#include <cstddef>
#include <vector>

#include "despoof/serialize.hpp"
#include "despoof/tensor.hpp"

namespace despoof {

/// Discrete forward-process constants. Step t runs 1..T; t = 0 is the clean
/// sample with alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  static constexpr double kDefaultBetaStart = 1e-4;
  static constexpr double kDefaultBetaEnd = 0.02;
  static constexpr int kDefaultSteps = 1000;

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double alpha_bar(int t) const;

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

  /// Normalized time u in [0, 1] to the discrete step round(u * T).
  int to_step(double u) const;

  void write_meta(Metadata& meta) const;
  static NoiseSchedule from_meta(const Metadata& meta);

  friend NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end);

 private:
  std::size_t index(int t) const;

  double beta_start_ = 0;
  double beta_end_ = 0;
  std::vector<double> betas_, alphas_, alpha_bars_;
};

NoiseSchedule build_linear_schedule(int steps = NoiseSchedule::kDefaultSteps,
                                    double beta_start = NoiseSchedule::kDefaultBetaStart,
                                    double beta_end = NoiseSchedule::kDefaultBetaEnd);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, for 1 <= t <= T.
template <class T>
BasicTensor<T> perturb(const BasicTensor<T>& x0, int t, const BasicTensor<T>& eps, const NoiseSchedule& schedule);

}  // namespace despoof
