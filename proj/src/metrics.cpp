#include "dns/metrics.hpp"

#include <cmath>

#include "dns/errors.hpp"

namespace dns {

NmseResult nmse(const std::vector<Sequence>& truth, const std::vector<Sequence>& estimates) {
  require(!truth.empty(), "NMSE needs at least one sequence");
  require(truth.size() == estimates.size(), "NMSE sequence count mismatch");
  NmseResult out;
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i].rows() == estimates[i].rows() && truth[i].cols() == estimates[i].cols(),
            "NMSE shape mismatch in sequence " + std::to_string(i));
    const double energy = truth[i].squaredNorm();
    if (energy == 0.0) throw ContractError("NMSE undefined for a zero-energy true sequence");
    const double err = (truth[i] - estimates[i]).squaredNorm();
    if (err == 0.0) {
      total += kNmseFloorDb;
      out.exact = true;
    } else {
      total += std::max(10.0 * std::log10(err / energy), kNmseFloorDb);
    }
  }
  out.db = total / static_cast<double>(truth.size());
  return out;
}

double nmse_db(const std::vector<Sequence>& truth, const std::vector<Sequence>& estimates) {
  return nmse(truth, estimates).db;
}

double alp(const std::vector<Sequence>& truth, const std::vector<SmoothingResult>& results) {
  require(!truth.empty(), "ALP needs at least one sequence");
  require(truth.size() == results.size(), "ALP sequence count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto T = static_cast<std::size_t>(truth[i].rows());
    require(results[i].length() == T, "ALP length mismatch in sequence " + std::to_string(i));
    double seq = 0.0;
    for (std::size_t t = 1; t <= T; ++t) {
      seq += evaluate_posterior_density(
          truth[i].row(static_cast<Eigen::Index>(t - 1)).transpose(), results[i], t);
    }
    total += seq / static_cast<double>(T);
  }
  return total / static_cast<double>(truth.size());
}

double measure_smnr(const TrajectoryDataset& data) {
  require(!data.states.empty(), "SMNR of an empty dataset");
  return smnr_db(data.states, data.model.H, data.model.Cw);
}

std::vector<Sequence> point_estimates(const std::vector<SmoothingResult>& results) {
  std::vector<Sequence> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(r.point_estimates);
  return out;
}

Sequence identity_estimate(const Sequence& y, const LinearMeasurementModel& model) {
  const Mat pinv = model.H.completeOrthogonalDecomposition().pseudoInverse();
  return y * pinv.transpose();
}

SmoothingResult identity_smooth(const Sequence& y, const LinearMeasurementModel& model) {
  require(y.cols() == model.meas_dim(), "measurement dimension mismatch");
  const Mat pinv = model.H.completeOrthogonalDecomposition().pseudoInverse();
  const Mat cov = symmetrized(pinv * model.Cw * pinv.transpose());
  SmoothingResult r;
  r.point_estimates = y * pinv.transpose();
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    r.posteriors.push_back({r.point_estimates.row(t).transpose(), cov});
  }
  return r;
}

}  // namespace dns
