#pragma once

#include <functional>
#include <vector>

#include "despoof/autograd.hpp"
#include "despoof/gradcheck.hpp"

namespace despoof::testing {

/// Relative error between the reverse-mode gradient of `loss` w.r.t. `p` and
/// central finite differences. `coords` restricts the comparison to a subset
/// of entries (all when empty); the loss is rebuilt for every probe.
inline double grad_rel_error(Var<double> p, const std::function<Var<double>()>& loss, double eps = 1e-6,
                             const std::vector<std::size_t>& coords = {}) {
  p.zero_grad();
  loss().backward();
  const Tensor analytic_full = p.grad();
  const auto eval = [&](const Tensor& v) {
    const Tensor saved = p.value();
    p.mutable_value() = v;
    NoGradGuard guard;
    const double r = loss().value().item();
    p.mutable_value() = saved;
    return r;
  };
  if (coords.empty()) return relative_error(analytic_full, finite_diff_grad<double>(eval, p.value(), eps));

  Tensor analytic(Shape{coords.size()}), numeric(Shape{coords.size()});
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto i = coords[k];
    analytic[k] = analytic_full[i];
    Tensor probe = p.value();
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    numeric[k] = (fp - fm) / (2 * eps);
  }
  return relative_error(analytic, numeric);
}

}  // namespace despoof::testing
