#pragma once

// Experiment grids over systems x SMNR levels x methods x realizations, and
// the aggregated results table.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dns/systems.hpp"
#include "dns/training.hpp"

namespace dns {

struct ExperimentProfile {
  std::string name = "desk";
  int n_train = 200;
  int t_train = 100;
  int n_test = 20;
  int t_test = 500;
  int epochs = 60;
  int realizations = 3;
};

ExperimentProfile desk_profile();
ExperimentProfile full_profile();
ExperimentProfile profile_from_name(const std::string& name);

/// Methods: "dns", "dns-s", "dns-noskip", "ertss", "identity".
struct ExperimentManifest {
  std::vector<SystemKind> systems{SystemKind::Lorenz};
  std::vector<double> smnr_db{0.0};
  std::vector<std::string> methods{"dns"};
  ExperimentProfile profile;
  std::uint64_t seed = 0;
  /// Hyperparameters shared by the learned methods; epochs come from the profile.
  TrainConfig train;

  void validate() const;
};

nlohmann::json to_json(const ExperimentManifest& m);
/// Keys missing from the file take the named profile's values.
ExperimentManifest experiment_manifest_from_json(const nlohmann::json& j,
                                                 const std::optional<std::string>& profile = {});

/// Outcome of one (method, system, SMNR, realization) run.
struct RunRecord {
  std::string method;
  SystemKind system = SystemKind::Lorenz;
  double smnr_db = 0.0;
  int realization = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t train_seed = 0;
  bool ok = false;
  std::string error;
  double nmse_db = 0.0;
  bool nmse_exact = false;
  double alp = 0.0;
  double identity_nmse_db = 0.0;
  double measured_smnr_db = 0.0;
  /// Learned methods: false when the loss did not decrease or the estimate
  /// lost to the identity estimate.
  bool flagged = false;
  std::string config_hash;
  std::string checkpoint_hash;
  nlohmann::json config;
  nlohmann::json history;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

struct ResultRow {
  std::string method;
  SystemKind system = SystemKind::Lorenz;
  double smnr_db = 0.0;
  int n_realizations = 0;  // successful runs
  int n_failed = 0;
  double nmse_mean = 0.0;
  std::optional<double> nmse_std;
  double alp_mean = 0.0;
  std::optional<double> alp_std;
};

struct ResultsTable {
  std::vector<ResultRow> rows;
  std::vector<RunRecord> runs;

  const ResultRow* find(const std::string& method, SystemKind system, double smnr_db) const;
};

/// Rows in first-appearance order of (method, system, SMNR). Std is the
/// sample standard deviation and only present with two or more runs.
ResultsTable aggregate(std::vector<RunRecord> runs);

std::string results_to_csv(const ResultsTable& table);
nlohmann::json results_to_json(const ResultsTable& table);

struct ExperimentOptions {
  /// Where checkpoints are written; nothing is written when empty.
  std::filesystem::path checkpoint_dir;
  std::function<void(const RunRecord&)> on_run;
};

ResultsTable run_experiment(const ExperimentManifest& manifest, const ExperimentOptions& options = {});

std::uint64_t cell_data_seed(std::uint64_t base, SystemKind system, double smnr_db, int realization);

}  // namespace dns
