#pragma once

#include <functional>
#include <string>

#include "dns/autodiff.hpp"

namespace dns::ad {

/// |a - b| / max(|a|, |b|, floor). Below the floor this is an absolute error
/// scaled by 1/floor.
double relative_error(double a, double b, double floor = 1e-8);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares `analytic` against central differences of loss(params), perturbing
/// each parameter entry by +-h. At most `max_entries_per_tensor` entries per
/// tensor are probed (evenly strided); 0 means all.
GradCheckReport check_gradients(ParameterStore& params,
                                const std::function<double(const ParameterStore&)>& loss,
                                const Gradients& analytic, double h = 1e-6,
                                double floor = 1e-8, std::size_t max_entries_per_tensor = 0);

}  // namespace dns::ad
