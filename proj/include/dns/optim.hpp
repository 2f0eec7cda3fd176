#pragma once

#include <cstdint>
#include <vector>

#include "dns/autodiff.hpp"

namespace dns::ad {

struct AdamState {
  std::vector<Mat> first_moment;
  std::vector<Mat> second_moment;
  std::int64_t step = 0;
  double base_lr = 1e-3;
  double decay = 0.9;
  int decay_every = 33;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParameterStore& params);
};

/// base_lr * decay^floor(epoch / decay_every)
double lr_schedule(int epoch, double base_lr = 1e-3, double decay = 0.9, int decay_every = 33);
double lr_schedule(int epoch, const AdamState& state);

/// One bias-corrected Adam update. Throws NumericalError on a non-finite
/// gradient without touching the parameters or moments.
void adam_step(ParameterStore& params, const Gradients& grads, AdamState& state, double lr);

/// Rescales grads so their global norm is at most max_norm. Returns the norm
/// before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace dns::ad
