#include "despoof/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace despoof {

template <class T>
void adam_update(BasicTensor<T>& params, const BasicTensor<T>& grads, AdamState<T>& state) {
  if (params.shape() != grads.shape()) {
    throw std::invalid_argument("adam_step: params " + shape_str(params.shape()) + " vs grads " +
                                shape_str(grads.shape()));
  }
  if (state.first_moment.shape() != params.shape() || state.second_moment.shape() != params.shape()) {
    throw std::invalid_argument("adam_step: moment shapes do not match params");
  }
  const auto& h = state.hyper;
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step_count));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T wd = static_cast<T>(h.weight_decay);
  const T lr = static_cast<T>(h.learning_rate);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(h.epsilon);
  auto& m = state.first_moment;
  auto& v = state.second_moment;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i] + wd * params[i];
    m[i] = b1 * m[i] + (T{1} - b1) * g;
    v[i] = b2 * v[i] + (T{1} - b2) * g * g;
    const T mhat = m[i] * inv_bc1;
    const T vhat = v[i] * inv_bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
std::pair<BasicTensor<T>, AdamState<T>> adam_step(const BasicTensor<T>& params, const BasicTensor<T>& grads,
                                                  AdamState<T> state) {
  BasicTensor<T> out = params;
  adam_update(out, grads, state);
  return {std::move(out), std::move(state)};
}

template <class T>
AdamOptimizer<T>::AdamOptimizer(std::vector<Var<T>> params, AdamHyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
  states_.reserve(params_.size());
  for (const auto& p : params_) states_.push_back(AdamState<T>::fresh(p.shape(), hyper_));
}

template <class T>
void AdamOptimizer<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <class T>
void AdamOptimizer<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    states_[i].hyper = hyper_;
    if (p.has_grad()) {
      adam_update(p.mutable_value(), p.node()->grad, states_[i]);
    } else {
      adam_update(p.mutable_value(), BasicTensor<T>::zeros(p.shape()), states_[i]);
    }
  }
}

template <class T>
void AdamOptimizer<T>::set_learning_rate(double lr) {
  hyper_.learning_rate = lr;
}

double step_decay_lr(double base_lr, std::uint64_t step, std::uint64_t every, double factor) {
  if (every == 0) return base_lr;
  return base_lr * std::pow(factor, static_cast<double>(step / every));
}

template void adam_update(BasicTensor<float>&, const BasicTensor<float>&, AdamState<float>&);
template void adam_update(BasicTensor<double>&, const BasicTensor<double>&, AdamState<double>&);
template std::pair<BasicTensor<float>, AdamState<float>> adam_step(const BasicTensor<float>&,
                                                                   const BasicTensor<float>&, AdamState<float>);
template std::pair<BasicTensor<double>, AdamState<double>> adam_step(const BasicTensor<double>&,
                                                                     const BasicTensor<double>&, AdamState<double>);
template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

}  // namespace despoof
