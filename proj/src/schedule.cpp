#include "despoof/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace despoof {

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bars_.at(index(t));
}

int NoiseSchedule::to_step(double u) const {
  if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("normalized time must lie in [0, 1]");
  return static_cast<int>(std::lround(u * steps()));
}

NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  const auto n = static_cast<std::size_t>(steps);
  s.betas_.resize(n);
  s.alphas_.resize(n);
  s.alpha_bars_.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas_[i] = 1.0 - s.betas_[i];
    prod *= s.alphas_[i];
    s.alpha_bars_[i] = prod;
  }
  return s;
}

void NoiseSchedule::write_meta(Metadata& meta) const {
  meta["schedule.steps"] = std::to_string(steps());
  meta["schedule.beta_start"] = format_double(beta_start_);
  meta["schedule.beta_end"] = format_double(beta_end_);
}

NoiseSchedule NoiseSchedule::from_meta(const Metadata& meta) {
  auto get = [&](const char* k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw FormatError(std::string("missing schedule field ") + k);
    return it->second;
  };
  return build_linear_schedule(std::stoi(get("schedule.steps")), parse_double(get("schedule.beta_start")),
                               parse_double(get("schedule.beta_end")));
}

template <class T>
BasicTensor<T> perturb(const BasicTensor<T>& x0, int t, const BasicTensor<T>& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) {
    throw std::invalid_argument("perturb: t = " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  }
  if (x0.shape() != eps.shape()) throw std::invalid_argument("perturb: eps shape differs from x0");
  const double ab = schedule.alpha_bar(t);
  const T a = static_cast<T>(std::sqrt(ab));
  const T b = static_cast<T>(std::sqrt(1.0 - ab));
  BasicTensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

template BasicTensor<float> perturb(const BasicTensor<float>&, int, const BasicTensor<float>&, const NoiseSchedule&);
template BasicTensor<double> perturb(const BasicTensor<double>&, int, const BasicTensor<double>&,
                                     const NoiseSchedule&);

}  // namespace despoof
