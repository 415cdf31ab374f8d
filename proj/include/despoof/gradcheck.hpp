#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "despoof/tensor.hpp"

namespace despoof {

/// Central-difference gradient of a scalar function:
///   g_i = (f(p + eps e_i) - f(p - eps e_i)) / (2 eps)
/// Throws std::domain_error if f returns a non-finite value.
template <class T>
BasicTensor<T> finite_diff_grad(const std::function<T(const BasicTensor<T>&)>& f, const BasicTensor<T>& params,
                                T eps) {
  if (!(eps > T{0})) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  BasicTensor<T> grad(params.shape());
  BasicTensor<T> probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T fp = f(probe);
    probe[i] = orig - eps;
    const T fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (T{2} * eps);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor)
template <class T>
T relative_error(const BasicTensor<T>& a, const BasicTensor<T>& b, T floor = T{1e-12}) {
  if (a.shape() != b.shape()) throw std::invalid_argument("relative_error: shape mismatch");
  T diff{0}, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

}  // namespace despoof
