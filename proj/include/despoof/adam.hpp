#pragma once

#include <cstdint>
#include <vector>

#include "despoof/autograd.hpp"
#include "despoof/tensor.hpp"

namespace despoof {

struct AdamHyper {
  double learning_rate = 1e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moments for one parameter tensor.
template <class T>
struct AdamState {
  std::uint64_t step_count = 0;
  BasicTensor<T> first_moment;
  BasicTensor<T> second_moment;
  AdamHyper hyper;

  static AdamState fresh(const Shape& shape, AdamHyper hyper = {}) {
    return {0, BasicTensor<T>::zeros(shape), BasicTensor<T>::zeros(shape), hyper};
  }
};

/// One bias-corrected Adam update. Weight decay enters as g <- g + wd * p.
template <class T>
std::pair<BasicTensor<T>, AdamState<T>> adam_step(const BasicTensor<T>& params, const BasicTensor<T>& grads,
                                                  AdamState<T> state);

/// In-place variant used by training loops.
template <class T>
void adam_update(BasicTensor<T>& params, const BasicTensor<T>& grads, AdamState<T>& state);

/// Adam over an ordered list of parameter Vars; one AdamState per Var.
template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Var<T>> params, AdamHyper hyper);

  void zero_grad();
  /// Applies the update to every parameter with its current gradient.
  void step();
  void set_learning_rate(double lr);
  double learning_rate() const { return hyper_.learning_rate; }
  std::uint64_t steps() const { return states_.empty() ? 0 : states_.front().step_count; }

 private:
  std::vector<Var<T>> params_;
  std::vector<AdamState<T>> states_;
  AdamHyper hyper_;
};

/// Step decay: lr * factor^(floor(step / every)).
double step_decay_lr(double base_lr, std::uint64_t step, std::uint64_t every, double factor);

}  // namespace despoof
