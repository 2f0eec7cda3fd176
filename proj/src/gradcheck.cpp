#include "dns/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dns::ad {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

GradCheckReport check_gradients(ParameterStore& params,
                                const std::function<double(const ParameterStore&)>& loss,
                                const Gradients& analytic, double h, double floor,
                                std::size_t max_entries_per_tensor) {
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto p = static_cast<ParamId>(i);
    Mat& value = params.value(p);
    const auto n = static_cast<std::size_t>(value.size());
    const std::size_t stride =
        max_entries_per_tensor == 0 || n <= max_entries_per_tensor ? 1 : n / max_entries_per_tensor;
    for (std::size_t k = 0; k < n; k += stride) {
      const auto idx = static_cast<Eigen::Index>(k);
      const double saved = value.data()[idx];
      value.data()[idx] = saved + h;
      const double up = loss(params);
      value.data()[idx] = saved - h;
      const double down = loss(params);
      value.data()[idx] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic.values[i].data()[idx];
      const double err = relative_error(exact, numeric, floor);
      ++report.entries_checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = err;
        report.worst_param = params.name(p);
        report.worst_index = idx;
        report.worst_analytic = exact;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace dns::ad
