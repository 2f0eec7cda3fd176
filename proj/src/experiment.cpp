#include "dns/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "dns/errors.hpp"
#include "dns/ertss.hpp"
#include "dns/hash.hpp"
#include "dns/metrics.hpp"

namespace dns {

ExperimentProfile desk_profile() { return {}; }

ExperimentProfile full_profile() { return {"full", 1000, 100, 100, 1000, 200, 10}; }

ExperimentProfile profile_from_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "full") return full_profile();
  throw ContractError("unknown profile '" + name + "' (expected desk or full)");
}

namespace {

const std::vector<std::string> kMethods{"dns", "dns-s", "dns-noskip", "ertss", "identity"};

bool is_learned(const std::string& method) {
  return method == "dns" || method == "dns-s" || method == "dns-noskip";
}

nlohmann::json profile_json(const ExperimentProfile& p) {
  return {{"name", p.name},     {"n_train", p.n_train}, {"t_train", p.t_train},
          {"n_test", p.n_test}, {"t_test", p.t_test},   {"epochs", p.epochs},
          {"realizations", p.realizations}};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void ExperimentManifest::validate() const {
  require(!systems.empty() && !smnr_db.empty() && !methods.empty(),
          "manifest needs at least one system, SMNR level and method");
  for (const auto& m : methods) {
    require(std::find(kMethods.begin(), kMethods.end(), m) != kMethods.end(),
            "unknown method '" + m + "'");
  }
  require(profile.n_train >= 1 && profile.t_train >= 1 && profile.n_test >= 1 &&
              profile.t_test >= 1 && profile.epochs >= 1 && profile.realizations >= 1,
          "profile sizes must be positive");
  train.validate();
}

nlohmann::json to_json(const ExperimentManifest& m) {
  nlohmann::json systems = nlohmann::json::array();
  for (auto k : m.systems) systems.push_back(to_string(k));
  return {{"systems", systems},       {"smnr_db", m.smnr_db},
          {"methods", m.methods},     {"profile", profile_json(m.profile)},
          {"seed", m.seed},           {"train", to_json(m.train)}};
}

ExperimentManifest experiment_manifest_from_json(const nlohmann::json& j,
                                                 const std::optional<std::string>& profile) {
  ExperimentManifest m;
  std::string name = "desk";
  if (j.contains("profile")) {
    const auto& p = j.at("profile");
    name = p.is_string() ? p.get<std::string>() : p.value("name", name);
  }
  if (profile) name = *profile;
  const bool custom = !profile && name != "desk" && name != "full";
  if (custom) {
    // A custom profile must spell out every size.
    const auto& p = j.at("profile");
    for (const char* key : {"n_train", "t_train", "n_test", "t_test", "epochs", "realizations"}) {
      require(p.is_object() && p.contains(key),
              "custom profile '" + name + "' is missing '" + key + "'");
    }
    m.profile.name = name;
  } else {
    m.profile = profile_from_name(name);
  }
  if (j.contains("profile") && j.at("profile").is_object() && !profile) {
    const auto& p = j.at("profile");
    m.profile.n_train = p.value("n_train", m.profile.n_train);
    m.profile.t_train = p.value("t_train", m.profile.t_train);
    m.profile.n_test = p.value("n_test", m.profile.n_test);
    m.profile.t_test = p.value("t_test", m.profile.t_test);
    m.profile.epochs = p.value("epochs", m.profile.epochs);
    m.profile.realizations = p.value("realizations", m.profile.realizations);
  }
  if (j.contains("systems")) {
    m.systems.clear();
    for (const auto& s : j.at("systems")) m.systems.push_back(system_kind_from_string(s.get<std::string>()));
  }
  if (j.contains("smnr_db")) m.smnr_db = j.at("smnr_db").get<std::vector<double>>();
  if (j.contains("methods")) m.methods = j.at("methods").get<std::vector<std::string>>();
  if (j.contains("realizations")) m.profile.realizations = j.at("realizations").get<int>();
  m.seed = j.value("seed", m.seed);
  if (j.contains("train")) m.train = train_config_from_json(j.at("train"));
  m.validate();
  return m;
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = {{"method", r.method},
                      {"system", to_string(r.system)},
                      {"smnr_db", r.smnr_db},
                      {"realization", r.realization},
                      {"data_seed", r.data_seed},
                      {"train_seed", r.train_seed},
                      {"ok", r.ok},
                      {"flagged", r.flagged},
                      {"config_hash", r.config_hash},
                      {"config", r.config}};
  if (!r.error.empty()) j["error"] = r.error;
  if (r.ok) {
    j["nmse_db"] = r.nmse_db;
    j["nmse_exact"] = r.nmse_exact;
    j["alp"] = r.alp;
    j["identity_nmse_db"] = r.identity_nmse_db;
    j["measured_smnr_db"] = r.measured_smnr_db;
  }
  if (!r.checkpoint_hash.empty()) j["checkpoint_hash"] = r.checkpoint_hash;
  if (!r.history.is_null()) j["history"] = r.history;
  return j;
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.method = j.at("method").get<std::string>();
  r.system = system_kind_from_string(j.at("system").get<std::string>());
  r.smnr_db = j.at("smnr_db").get<double>();
  r.realization = j.at("realization").get<int>();
  r.data_seed = j.at("data_seed").get<std::uint64_t>();
  r.train_seed = j.at("train_seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.flagged = j.value("flagged", false);
  r.error = j.value("error", "");
  r.config_hash = j.value("config_hash", "");
  r.config = j.value("config", nlohmann::json());
  r.checkpoint_hash = j.value("checkpoint_hash", "");
  if (j.contains("history")) r.history = j.at("history");
  if (r.ok) {
    r.nmse_db = j.at("nmse_db").get<double>();
    r.nmse_exact = j.value("nmse_exact", false);
    r.alp = j.at("alp").get<double>();
    r.identity_nmse_db = j.value("identity_nmse_db", 0.0);
    r.measured_smnr_db = j.value("measured_smnr_db", 0.0);
  }
  return r;
}

const ResultRow* ResultsTable::find(const std::string& method, SystemKind system,
                                    double smnr_db) const {
  for (const auto& row : rows) {
    if (row.method == method && row.system == system && row.smnr_db == smnr_db) return &row;
  }
  return nullptr;
}

ResultsTable aggregate(std::vector<RunRecord> runs) {
  ResultsTable table;
  std::vector<std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) {
    std::size_t g = 0;
    for (; g < table.rows.size(); ++g) {
      const auto& row = table.rows[g];
      if (row.method == r.method && row.system == r.system && row.smnr_db == r.smnr_db) break;
    }
    if (g == table.rows.size()) {
      ResultRow row;
      row.method = r.method;
      row.system = r.system;
      row.smnr_db = r.smnr_db;
      table.rows.push_back(row);
      groups.emplace_back();
    }
    groups[g].push_back(&r);
  }
  for (std::size_t g = 0; g < table.rows.size(); ++g) {
    auto& row = table.rows[g];
    std::vector<double> nmse, alp;
    for (const auto* r : groups[g]) {
      if (!r->ok) {
        ++row.n_failed;
        continue;
      }
      nmse.push_back(r->nmse_db);
      alp.push_back(r->alp);
    }
    row.n_realizations = static_cast<int>(nmse.size());
    auto summarize = [](const std::vector<double>& v, double& mean, std::optional<double>& sd) {
      if (v.empty()) return;
      double sum = 0.0;
      for (double x : v) sum += x;
      mean = sum / static_cast<double>(v.size());
      if (v.size() >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      }
    };
    summarize(nmse, row.nmse_mean, row.nmse_std);
    summarize(alp, row.alp_mean, row.alp_std);
  }
  table.runs = std::move(runs);
  return table;
}

std::string results_to_csv(const ResultsTable& table) {
  std::ostringstream out;
  out << "method,system,smnr_db,n_realizations,n_failed,nmse_db_mean,nmse_db_std,alp_mean,alp_std\n";
  for (const auto& row : table.rows) {
    const bool any = row.n_realizations > 0;
    out << row.method << ',' << to_string(row.system) << ',' << fmt(row.smnr_db) << ','
        << row.n_realizations << ',' << row.n_failed << ',' << (any ? fmt(row.nmse_mean) : "")
        << ',' << (row.nmse_std ? fmt(*row.nmse_std) : "") << ','
        << (any ? fmt(row.alp_mean) : "") << ',' << (row.alp_std ? fmt(*row.alp_std) : "")
        << '\n';
  }
  return out.str();
}

nlohmann::json results_to_json(const ResultsTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    nlohmann::json j = {{"method", row.method},
                        {"system", to_string(row.system)},
                        {"smnr_db", row.smnr_db},
                        {"n_realizations", row.n_realizations},
                        {"n_failed", row.n_failed}};
    if (row.n_realizations > 0) {
      j["nmse_db_mean"] = row.nmse_mean;
      j["alp_mean"] = row.alp_mean;
    }
    if (row.nmse_std) j["nmse_db_std"] = *row.nmse_std;
    if (row.alp_std) j["alp_std"] = *row.alp_std;
    rows.push_back(j);
  }
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : table.runs) runs.push_back(to_json(r));
  return {{"rows", rows}, {"runs", runs}};
}

std::uint64_t cell_data_seed(std::uint64_t base, SystemKind system, double smnr_db,
                             int realization) {
  const auto level = static_cast<std::uint64_t>(std::llround(smnr_db * 1000.0));
  return derive_seed(base, {static_cast<std::uint64_t>(system) + 1, level,
                            static_cast<std::uint64_t>(realization)});
}

namespace {

struct Cell {
  TrajectoryDataset train;
  TrajectoryDataset test;
  double identity_nmse = 0.0;
};

void evaluate_into(RunRecord& rec, const Cell& cell, const std::vector<SmoothingResult>& results) {
  const auto n = nmse(cell.test.states, point_estimates(results));
  rec.nmse_db = n.db;
  rec.nmse_exact = n.exact;
  rec.alp = alp(cell.test.states, results);
}

void run_method(RunRecord& rec, const ExperimentManifest& manifest, const Cell& cell,
                const ExperimentOptions& options) {
  const auto& test = cell.test;
  std::vector<SmoothingResult> results;
  if (rec.method == "identity") {
    for (const auto& y : test.measurements) results.push_back(identity_smooth(y, test.model));
  } else if (rec.method == "ertss") {
    const auto stm = stm_for(test.system);
    for (const auto& y : test.measurements) results.push_back(ertss_smooth(y, stm, test.model));
  } else {
    TrainConfig cfg = manifest.train;
    cfg.variant = variant_from_string(rec.method);
    cfg.epochs = manifest.profile.epochs;
    cfg.seed = rec.train_seed;
    const auto view = measurement_view(cell.train);
    auto state = init_training(view, cfg);
    run_epochs(state, view, cfg.epochs);
    rec.history = history_to_json(state.history);
    const auto ckpt = checkpoint_to_container(state);
    rec.checkpoint_hash = git_blob_hash(serialize(ckpt));
    if (!options.checkpoint_dir.empty()) {
      std::filesystem::create_directories(options.checkpoint_dir);
      const auto file = options.checkpoint_dir /
                        (rec.method + "_" + to_string(rec.system) + "_" + fmt(rec.smnr_db) + "_r" +
                         std::to_string(rec.realization) + ".ckpt");
      write_container(file, ckpt);
    }
    for (const auto& y : test.measurements) results.push_back(smooth(y, test.model, state.params));
    const bool decreased = state.history.back().mean_loss < state.history.front().mean_loss;
    evaluate_into(rec, cell, results);
    rec.flagged = !decreased || rec.nmse_db > cell.identity_nmse;
    return;
  }
  evaluate_into(rec, cell, results);
}

}  // namespace

ResultsTable run_experiment(const ExperimentManifest& manifest, const ExperimentOptions& options) {
  manifest.validate();
  std::vector<RunRecord> runs;
  for (auto kind : manifest.systems) {
    const auto spec = default_spec(kind);
    for (double level : manifest.smnr_db) {
      for (int r = 0; r < manifest.profile.realizations; ++r) {
        const auto data_seed = cell_data_seed(manifest.seed, kind, level, r);
        std::optional<Cell> cell;
        std::string cell_error;
        try {
          const auto& p = manifest.profile;
          cell = Cell{make_dataset(spec, p.n_train, p.t_train, level, data_seed),
                      make_dataset(spec, p.n_test, p.t_test, level, derive_seed(data_seed, {0x7e57})),
                      0.0};
          std::vector<Sequence> ident;
          for (const auto& y : cell->test.measurements) {
            ident.push_back(identity_estimate(y, cell->test.model));
          }
          cell->identity_nmse = nmse_db(cell->test.states, ident);
        } catch (const std::exception& e) {
          cell_error = std::string("data generation failed: ") + e.what();
        }
        for (const auto& method : manifest.methods) {
          RunRecord rec;
          rec.method = method;
          rec.system = kind;
          rec.smnr_db = level;
          rec.realization = r;
          rec.data_seed = data_seed;
          rec.train_seed = derive_seed(data_seed, {0x7a17});
          rec.config = {{"method", method},
                        {"system", to_json(spec)},
                        {"smnr_db", level},
                        {"realization", r},
                        {"data_seed", data_seed},
                        {"train_seed", rec.train_seed},
                        {"profile", profile_json(manifest.profile)}};
          if (is_learned(method)) {
            auto cfg = manifest.train;
            cfg.variant = variant_from_string(method);
            cfg.epochs = manifest.profile.epochs;
            cfg.seed = rec.train_seed;
            rec.config["train"] = to_json(cfg);
          }
          rec.config_hash = fnv1a_hex(rec.config.dump());
          if (!cell) {
            rec.error = cell_error;
          } else {
            rec.identity_nmse_db = cell->identity_nmse;
            rec.measured_smnr_db = measure_smnr(cell->test);
            try {
              run_method(rec, manifest, *cell, options);
              rec.ok = true;
            } catch (const std::exception& e) {
              rec.error = e.what();
            }
          }
          if (options.on_run) options.on_run(rec);
          runs.push_back(std::move(rec));
        }
      }
    }
  }
  return aggregate(std::move(runs));
}

}  // namespace dns
