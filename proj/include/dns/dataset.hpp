#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dns/container.hpp"
#include "dns/systems.hpp"

namespace dns {

inline constexpr int kDatasetFormatVersion = 1;

/// Paired state and measurement sequences. States are for evaluation only.
struct TrajectoryDataset {
  std::vector<Sequence> states;
  std::vector<Sequence> measurements;
  LinearMeasurementModel model;
  double smnr_db = 0.0;
  std::uint64_t seed = 0;
  SystemSpec system;

  std::size_t size() const { return measurements.size(); }
  void validate() const;
};

/// What a learner is allowed to see: measurements and the measurement model.
struct MeasurementView {
  std::vector<Sequence> measurements;
  LinearMeasurementModel model;
  nlohmann::json meta;

  std::size_t size() const { return measurements.size(); }
};

MeasurementView measurement_view(const TrajectoryDataset& data);

/// Simulates states only; sequence i uses substream (seed, 0, i).
std::vector<Sequence> simulate_states(const SystemSpec& system, int N, int T,
                                      std::uint64_t seed);

/// y_t = H x_t + w_t, with w drawn from substream (seed, 1, i) for sequence i.
std::vector<Sequence> synthesize_measurements(const std::vector<Sequence>& states,
                                              const LinearMeasurementModel& model,
                                              std::uint64_t seed);

/// Simulates N sequences, calibrates sigma_w^2 to the target SMNR on them and
/// synthesizes the measurements. An empty H means identity.
TrajectoryDataset make_dataset(const SystemSpec& system, int N, int T,
                               double target_smnr_db, std::uint64_t seed,
                               const Mat& H = Mat());

Container to_container(const TrajectoryDataset& data);
TrajectoryDataset dataset_from_container(const Container& c);

void write_dataset(const std::filesystem::path& path, const TrajectoryDataset& data);
TrajectoryDataset read_dataset(const std::filesystem::path& path);
/// Loads only the measurement arrays; the states block is skipped unread.
MeasurementView read_measurement_view(const std::filesystem::path& path);

/// Stacks sequences into one (sum T) x d array, row-major, with lengths.
void pack_sequences(const std::vector<Sequence>& seqs, std::vector<std::uint64_t>& shape,
                    std::vector<double>& values);
std::vector<Sequence> unpack_sequences(const NamedArray& arr,
                                       const std::vector<std::uint64_t>& lengths);

nlohmann::json matrix_to_json(const Mat& m);
Mat matrix_from_array(const NamedArray& arr);
NamedArray matrix_to_array(std::string name, const Mat& m);

}  // namespace dns
