#include "dns/optim.hpp"

#include <cmath>

#include "dns/errors.hpp"

namespace dns::ad {

AdamState AdamState::for_params(const ParameterStore& params) {
  AdamState s;
  const auto zeros = Gradients::zeros_like(params);
  s.first_moment = zeros.values;
  s.second_moment = zeros.values;
  return s;
}

double lr_schedule(int epoch, double base_lr, double decay, int decay_every) {
  require(epoch >= 0, "epoch must be non-negative");
  require(decay_every >= 1, "decay_every must be positive");
  return base_lr * std::pow(decay, epoch / decay_every);
}

double lr_schedule(int epoch, const AdamState& state) {
  return lr_schedule(epoch, state.base_lr, state.decay, state.decay_every);
}

void adam_step(ParameterStore& params, const Gradients& grads, AdamState& state, double lr) {
  require(grads.values.size() == params.size() && state.first_moment.size() == params.size() &&
              state.second_moment.size() == params.size(),
          "adam_step: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto p = static_cast<ParamId>(i);
    require(grads.values[i].rows() == params.value(p).rows() &&
                grads.values[i].cols() == params.value(p).cols(),
            "adam_step: gradient shape mismatch for " + params.name(p));
  }
  if (!grads.all_finite()) throw NumericalError("adam_step: non-finite gradient");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = grads.values[i];
    Mat& m = state.first_moment[i];
    Mat& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    const auto mhat = m.array() / c1;
    const auto vhat = v.array() / c2;
    params.value(static_cast<ParamId>(i)).array() -= lr * mhat / (vhat.sqrt() + state.eps);
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double n = grads.norm();
  if (std::isfinite(n) && n > max_norm && max_norm > 0.0) grads.scale(max_norm / n);
  return n;
}

}  // namespace dns::ad
