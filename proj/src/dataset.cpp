#include "dns/dataset.hpp"

#include "dns/errors.hpp"

namespace dns {

namespace {

std::vector<std::uint64_t> read_lengths(const Container& c) {
  const auto& arr = c.at("lengths");
  std::vector<std::uint64_t> lengths;
  lengths.reserve(arr.values.size());
  for (double v : arr.values) lengths.push_back(static_cast<std::uint64_t>(v));
  return lengths;
}

LinearMeasurementModel read_model(const Container& c) {
  return {matrix_from_array(c.at("H")), matrix_from_array(c.at("Cw"))};
}

void check_kind(const Container& c) {
  if (c.meta.value("kind", "") != "trajectory-dataset") {
    throw FormatError("file is not a trajectory dataset");
  }
  if (c.meta.value("format_version", 0) != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format version");
  }
}

}  // namespace

void TrajectoryDataset::validate() const {
  require(states.size() == measurements.size(), "states and measurements count differ");
  for (std::size_t i = 0; i < states.size(); ++i) {
    require(states[i].rows() == measurements[i].rows(),
            "state and measurement sequence lengths differ");
    require(states[i].cols() == model.state_dim(), "state dimension mismatch");
    require(measurements[i].cols() == model.meas_dim(), "measurement dimension mismatch");
  }
}

MeasurementView measurement_view(const TrajectoryDataset& data) {
  MeasurementView v;
  v.measurements = data.measurements;
  v.model = data.model;
  v.meta = {{"system", to_json(data.system)}, {"seed", data.seed}, {"smnr_db", data.smnr_db}};
  return v;
}

std::vector<Sequence> simulate_states(const SystemSpec& system, int N, int T,
                                      std::uint64_t seed) {
  require(N >= 1 && T >= 1, "dataset needs N >= 1 and T >= 1");
  system.validate();
  std::vector<Sequence> states;
  states.reserve(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    Rng rng(derive_seed(seed, {0, static_cast<std::uint64_t>(i)}));
    switch (system.kind) {
      case SystemKind::Lorenz:
      case SystemKind::Chen: {
        std::normal_distribution<double> normal;
        Vec x0(3);
        for (int k = 0; k < 3; ++k) x0(k) = 1.0 + normal(rng);
        states.push_back(system.kind == SystemKind::Lorenz
                             ? simulate_lorenz(x0, T, system, rng)
                             : simulate_chen(x0, T, system, rng));
        break;
      }
      case SystemKind::Sdsp:
        states.push_back(simulate_sdsp(T, system, rng));
        break;
    }
  }
  return states;
}

std::vector<Sequence> synthesize_measurements(const std::vector<Sequence>& states,
                                              const LinearMeasurementModel& model,
                                              std::uint64_t seed) {
  const Mat noise_factor = robust_cholesky(model.Cw).matrixL();
  std::vector<Sequence> out;
  out.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    Rng rng(derive_seed(seed, {1, static_cast<std::uint64_t>(i)}));
    std::normal_distribution<double> normal;
    const auto T = states[i].rows();
    const auto n = model.meas_dim();
    Mat z(T, n);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index k = 0; k < n; ++k) z(t, k) = normal(rng);
    }
    out.push_back(states[i] * model.H.transpose() + z * noise_factor.transpose());
  }
  return out;
}

TrajectoryDataset make_dataset(const SystemSpec& system, int N, int T, double target_smnr_db,
                               std::uint64_t seed, const Mat& H) {
  TrajectoryDataset d;
  d.system = system;
  d.seed = seed;
  d.smnr_db = target_smnr_db;
  d.states = simulate_states(system, N, T, seed);
  const Mat h = H.size() == 0 ? Mat::Identity(system.state_dim, system.state_dim) : H;
  d.model = LinearMeasurementModel(h, calibrate_noise(d.states, h, target_smnr_db));
  d.measurements = synthesize_measurements(d.states, d.model, seed);
  return d;
}

void pack_sequences(const std::vector<Sequence>& seqs, std::vector<std::uint64_t>& shape,
                    std::vector<double>& values) {
  std::uint64_t rows = 0;
  const std::uint64_t cols = seqs.empty() ? 0 : static_cast<std::uint64_t>(seqs[0].cols());
  for (const auto& s : seqs) rows += static_cast<std::uint64_t>(s.rows());
  shape = {rows, cols};
  values.clear();
  values.reserve(rows * cols);
  for (const auto& s : seqs) {
    require(static_cast<std::uint64_t>(s.cols()) == cols, "sequences differ in dimension");
    for (Eigen::Index t = 0; t < s.rows(); ++t) {
      for (Eigen::Index k = 0; k < s.cols(); ++k) values.push_back(s(t, k));
    }
  }
}

std::vector<Sequence> unpack_sequences(const NamedArray& arr,
                                       const std::vector<std::uint64_t>& lengths) {
  if (arr.shape.size() != 2) throw FormatError("array '" + arr.name + "' must be 2-D");
  const auto cols = static_cast<Eigen::Index>(arr.shape[1]);
  std::uint64_t total = 0;
  for (auto len : lengths) total += len;
  if (total != arr.shape[0]) throw FormatError("sequence lengths do not sum to row count");
  std::vector<Sequence> out;
  std::size_t pos = 0;
  for (auto len : lengths) {
    Sequence s(static_cast<Eigen::Index>(len), cols);
    for (Eigen::Index t = 0; t < s.rows(); ++t) {
      for (Eigen::Index k = 0; k < cols; ++k) s(t, k) = arr.values[pos++];
    }
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json matrix_to_json(const Mat& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

NamedArray matrix_to_array(std::string name, const Mat& m) {
  NamedArray a{std::move(name),
               {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
               {}};
  a.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.values.push_back(m(r, c));
  }
  return a;
}

Mat matrix_from_array(const NamedArray& arr) {
  if (arr.shape.size() != 2) throw FormatError("array '" + arr.name + "' must be 2-D");
  Mat m(static_cast<Eigen::Index>(arr.shape[0]), static_cast<Eigen::Index>(arr.shape[1]));
  std::size_t pos = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = arr.values[pos++];
  }
  return m;
}

Container to_container(const TrajectoryDataset& data) {
  data.validate();
  Container c;
  c.meta = {{"kind", "trajectory-dataset"},
            {"format_version", kDatasetFormatVersion},
            {"system", to_json(data.system)},
            {"seed", data.seed},
            {"smnr_db", data.smnr_db},
            {"num_sequences", data.size()},
            {"H", matrix_to_json(data.model.H)},
            {"Cw", matrix_to_json(data.model.Cw)}};
  std::vector<double> lengths;
  for (const auto& s : data.measurements) lengths.push_back(static_cast<double>(s.rows()));
  NamedArray arr;
  c.add("lengths", {static_cast<std::uint64_t>(lengths.size())}, lengths);
  c.arrays.push_back(matrix_to_array("H", data.model.H));
  c.arrays.push_back(matrix_to_array("Cw", data.model.Cw));
  pack_sequences(data.measurements, arr.shape, arr.values);
  c.add("measurements", arr.shape, arr.values);
  pack_sequences(data.states, arr.shape, arr.values);
  c.add("states", arr.shape, arr.values);
  return c;
}

TrajectoryDataset dataset_from_container(const Container& c) {
  check_kind(c);
  TrajectoryDataset d;
  d.system = system_spec_from_json(c.meta.at("system"));
  d.seed = c.meta.at("seed").get<std::uint64_t>();
  d.smnr_db = c.meta.at("smnr_db").get<double>();
  d.model = read_model(c);
  const auto lengths = read_lengths(c);
  d.measurements = unpack_sequences(c.at("measurements"), lengths);
  d.states = unpack_sequences(c.at("states"), lengths);
  d.validate();
  return d;
}

void write_dataset(const std::filesystem::path& path, const TrajectoryDataset& data) {
  write_container(path, to_container(data));
}

TrajectoryDataset read_dataset(const std::filesystem::path& path) {
  return dataset_from_container(read_container(path));
}

MeasurementView read_measurement_view(const std::filesystem::path& path) {
  const auto c = read_container(path, std::set<std::string>{"lengths", "H", "Cw", "measurements"});
  check_kind(c);
  MeasurementView v;
  v.model = read_model(c);
  v.measurements = unpack_sequences(c.at("measurements"), read_lengths(c));
  v.meta = {{"system", c.meta.at("system")},
            {"seed", c.meta.at("seed")},
            {"smnr_db", c.meta.at("smnr_db")}};
  return v;
}

}  // namespace dns
