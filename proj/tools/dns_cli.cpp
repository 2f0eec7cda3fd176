// dns: generate datasets, train and evaluate smoothers, run experiment grids
// and export plot-ready CSV.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dns/dataset.hpp"
#include "dns/ertss.hpp"
#include "dns/errors.hpp"
#include "dns/experiment.hpp"
#include "dns/hash.hpp"
#include "dns/metrics.hpp"
#include "dns/smoothing_io.hpp"
#include "dns/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path parent_or_cwd(const fs::path& p) {
  return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

/// Appends one manifest line per command to manifests.jsonl next to the outputs.
class Manifest {
 public:
  Manifest(std::string command, std::string config_path)
      : started_(utc_now()), j_{{"command", std::move(command)}, {"config_path", std::move(config_path)}} {}

  json& config() { return j_["resolved_config"]; }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void output(const fs::path& p) {
    j_["outputs"].push_back({{"path", p.string()}, {"git_blob_hash", dns::git_blob_hash_file(p)}});
  }
  void input(const fs::path& p) {
    j_["inputs"].push_back({{"path", p.string()}, {"git_blob_hash", dns::git_blob_hash_file(p)}});
  }
  json& extra() { return j_; }

  void append_to(const fs::path& dir) {
    j_["started"] = started_;
    j_["finished"] = utc_now();
    fs::create_directories(dir);
    std::ofstream out(dir / "manifests.jsonl", std::ios::app);
    if (!out) throw std::runtime_error("cannot append to " + (dir / "manifests.jsonl").string());
    out << j_.dump() << '\n';
  }

 private:
  std::string started_;
  json j_;
};

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::string system = "lorenz";
  int n = 100;
  int t = 100;
  double smnr = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a, const std::string& config_path) {
  const auto spec = dns::default_spec(dns::system_kind_from_string(a.system));
  Manifest m("generate", config_path);
  m.config() = {{"system", dns::to_json(spec)}, {"n", a.n}, {"t", a.t}, {"smnr_db", a.smnr}};
  m.seed(a.seed);
  dns::require(a.n >= 1 && a.t >= 1, "--n and --t must be at least 1");
  const auto data = dns::make_dataset(spec, a.n, a.t, a.smnr, a.seed);
  dns::write_dataset(a.out, data);
  m.output(a.out);
  m.extra()["sigma_w2"] = data.model.Cw(0, 0);
  m.append_to(parent_or_cwd(a.out));
  std::cout << "wrote " << a.n << " sequences of length " << a.t << " to " << a.out
            << " (sigma_w^2 = " << data.model.Cw(0, 0) << ")\n";
  return kExitOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string variant = "dns";
  int epochs = 200;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool bptt = false;
  double clip = 10.0;
  std::string heldout;
  std::string resume;
  std::string out;
};

std::string history_csv(const dns::TrainingHistory& h) {
  std::ostringstream out;
  out << "epoch,mean_loss,lr,heldout_loss\n";
  out.precision(17);
  for (const auto& r : h) {
    out << r.epoch << ',' << r.mean_loss << ',' << r.lr << ',';
    if (std::isfinite(r.heldout_loss)) out << r.heldout_loss;
    out << '\n';
  }
  return out.str();
}

int cmd_train(const TrainArgs& a, const std::string& config_path) {
  Manifest m("train", config_path);
  const auto view = dns::read_measurement_view(a.data);
  m.input(a.data);
  std::optional<dns::MeasurementView> heldout;
  if (!a.heldout.empty()) {
    heldout = dns::read_measurement_view(a.heldout);
    m.input(a.heldout);
  }

  dns::TrainingState state;
  if (!a.resume.empty()) {
    state = dns::read_checkpoint(a.resume);
    m.input(a.resume);
    state.config.epochs = a.epochs;
  } else {
    dns::TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.base_lr = a.lr;
    cfg.seed = a.seed;
    cfg.variant = dns::variant_from_string(a.variant);
    cfg.clip_norm = a.clip;
    cfg.detach_feedback = !a.bptt;
    state = dns::init_training(view, cfg);
  }
  m.config() = {{"data", a.data},
                {"train", dns::to_json(state.config)},
                {"architecture", dns::to_json(state.params.config)},
                {"start_epoch", state.next_epoch}};
  m.seed(state.config.seed);

  const fs::path out(a.out);
  const fs::path history_path = out.string() + ".history.csv";
  int status = kExitOk;
  try {
    dns::run_epochs(
        state, view, state.config.epochs,
        [&](const dns::EpochRecord& r) {
          // Checkpoint every epoch so a later failure leaves the last finite state on disk.
          dns::write_checkpoint(out, state);
          std::cout << "epoch " << r.epoch << " loss " << r.mean_loss << " lr " << r.lr;
          if (std::isfinite(r.heldout_loss)) std::cout << " heldout " << r.heldout_loss;
          std::cout << '\n';
        },
        heldout ? &*heldout : nullptr);
  } catch (const dns::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    m.extra()["error"] = e.what();
    status = kExitNumerical;
  }
  if (!fs::exists(out)) dns::write_checkpoint(out, state);
  write_text(history_path, history_csv(state.history));
  m.extra()["final_epoch"] = state.next_epoch;
  m.output(out);
  m.output(history_path);
  m.append_to(parent_or_cwd(out));
  return status;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string data;
  std::string checkpoint;
  bool ertss = false;
  bool identity = false;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a, const std::string& config_path) {
  const int chosen = (a.checkpoint.empty() ? 0 : 1) + (a.ertss ? 1 : 0) + (a.identity ? 1 : 0);
  dns::require(chosen == 1, "choose exactly one of --checkpoint, --ertss or --identity");
  Manifest m("evaluate", config_path);
  const auto data = dns::read_dataset(a.data);
  m.input(a.data);

  std::vector<dns::SmoothingResult> results;
  std::string method;
  if (a.ertss) {
    method = "ertss";
    const auto stm = dns::stm_for(data.system);
    for (const auto& y : data.measurements) results.push_back(dns::ertss_smooth(y, stm, data.model));
  } else if (a.identity) {
    method = "identity";
    for (const auto& y : data.measurements) results.push_back(dns::identity_smooth(y, data.model));
  } else {
    const auto state = dns::read_checkpoint(a.checkpoint);
    m.input(a.checkpoint);
    method = dns::to_string(state.params.config.variant);
    dns::check_model_matches(state.params, data.model);
    for (const auto& y : data.measurements) results.push_back(dns::smooth(y, data.model, state.params));
  }

  const auto n = dns::nmse(data.states, dns::point_estimates(results));
  std::vector<dns::Sequence> ident;
  for (const auto& y : data.measurements) ident.push_back(dns::identity_estimate(y, data.model));
  const json metrics = {{"method", method},
                        {"num_sequences", data.size()},
                        {"nmse_db", n.db},
                        {"nmse_exact", n.exact},
                        {"alp", dns::alp(data.states, results)},
                        {"smnr_db", dns::measure_smnr(data)},
                        {"identity_nmse_db", dns::nmse_db(data.states, ident)}};
  m.config() = {{"method", method}, {"system", dns::to_json(data.system)}};
  m.seed(data.seed);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  std::ostringstream csv;
  csv.precision(17);
  csv << "method,num_sequences,nmse_db,nmse_exact,alp,smnr_db,identity_nmse_db\n"
      << method << ',' << data.size() << ',' << n.db << ',' << (n.exact ? 1 : 0) << ','
      << metrics["alp"].get<double>() << ',' << metrics["smnr_db"].get<double>() << ','
      << metrics["identity_nmse_db"].get<double>() << '\n';
  write_text(dir / "metrics.csv", csv.str());
  dns::write_smoothing_results(dir / "smoothing.dnsarr", results, {{"method", method}});
  m.output(dir / "metrics.json");
  m.output(dir / "metrics.csv");
  m.output(dir / "smoothing.dnsarr");
  m.append_to(dir);
  std::cout << metrics.dump(2) << '\n';
  return kExitOk;
}

// --- experiment -------------------------------------------------------------

struct ExperimentArgs {
  std::string manifest;
  std::string profile;
  std::string out;
  bool save_checkpoints = false;
};

int cmd_experiment(const ExperimentArgs& a, const std::string& config_path) {
  json mj = json::object();
  if (!a.manifest.empty()) {
    std::ifstream in(a.manifest);
    if (!in) throw dns::ContractError("cannot open manifest " + a.manifest);
    try {
      mj = json::parse(in);
    } catch (const json::exception& e) {
      throw dns::FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }
  }
  const auto manifest = dns::experiment_manifest_from_json(
      mj, a.profile.empty() ? std::nullopt : std::optional<std::string>(a.profile));
  Manifest m("experiment", config_path);
  m.config() = dns::to_json(manifest);
  m.seed(manifest.seed);
  if (!a.manifest.empty()) m.input(a.manifest);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  dns::ExperimentOptions options;
  if (a.save_checkpoints) options.checkpoint_dir = dir / "checkpoints";
  std::ofstream runs(dir / "runs.jsonl", std::ios::app);
  options.on_run = [&](const dns::RunRecord& r) {
    std::cout << r.method << ' ' << dns::to_string(r.system) << ' ' << r.smnr_db << " dB #"
              << r.realization << ": ";
    if (r.ok) {
      std::cout << "NMSE " << r.nmse_db << " dB, ALP " << r.alp << (r.flagged ? " [flagged]" : "");
    } else {
      std::cout << "failed: " << r.error;
    }
    std::cout << std::endl;
    auto j = dns::to_json(r);
    j.erase("history");
    runs << j.dump() << '\n' << std::flush;
  };
  const auto table = dns::run_experiment(manifest, options);
  write_text(dir / "results.csv", dns::results_to_csv(table));
  write_text(dir / "results.json", dns::results_to_json(table).dump(2) + "\n");
  m.output(dir / "results.csv");
  m.output(dir / "results.json");
  m.append_to(dir);
  std::cout << dns::results_to_csv(table);
  return kExitOk;
}

// --- export-plots -----------------------------------------------------------

struct ExportArgs {
  std::string results;
  std::string trajectories;
  std::string out;
  int sequences = 1;
};

int cmd_export_plots(const ExportArgs& a, const std::string& config_path) {
  Manifest m("export-plots", config_path);
  const auto data = dns::read_dataset(a.trajectories);
  const auto results = dns::read_smoothing_results(a.results);
  m.input(a.trajectories);
  m.input(a.results);
  dns::require(results.size() == data.size(),
               "smoothing results and dataset have different sequence counts");
  dns::require(a.sequences >= 1, "--sequences must be at least 1");
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(a.sequences), data.size());
  m.config() = {{"sequences", count}};

  const fs::path dir(a.out);
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& x = data.states[i];
    const auto& y = data.measurements[i];
    const auto& r = results[i];
    dns::require(r.length() == static_cast<std::size_t>(x.rows()) && r.point_estimates.cols() == x.cols(),
                 "smoothing result shape does not match sequence " + std::to_string(i));
    std::ostringstream csv;
    csv.precision(17);
    csv << 't';
    for (Eigen::Index k = 0; k < x.cols(); ++k) csv << ",x_true_" << k;
    for (Eigen::Index k = 0; k < y.cols(); ++k) csv << ",y_" << k;
    for (Eigen::Index k = 0; k < x.cols(); ++k) csv << ",mean_" << k;
    for (Eigen::Index k = 0; k < x.cols(); ++k) csv << ",std_" << k;
    csv << '\n';
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const auto& post = r.posteriors[static_cast<std::size_t>(t)];
      csv << t + 1;
      for (Eigen::Index k = 0; k < x.cols(); ++k) csv << ',' << x(t, k);
      for (Eigen::Index k = 0; k < y.cols(); ++k) csv << ',' << y(t, k);
      for (Eigen::Index k = 0; k < x.cols(); ++k) csv << ',' << post.mean(k);
      for (Eigen::Index k = 0; k < x.cols(); ++k) csv << ',' << std::sqrt(post.cov(k, k));
      csv << '\n';
    }
    const auto file = dir / ("trajectory_" + std::to_string(i) + ".csv");
    write_text(file, csv.str());
    m.output(file);
  }
  m.append_to(dir);
  std::cout << "wrote " << count << " trajectory CSV file(s) to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven nonlinear smoother"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option defaults; flags override it");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "simulate a dataset");
  g->add_option("--system", gen.system, "lorenz | chen | sdsp")
      ->check(CLI::IsMember({"lorenz", "chen", "sdsp"}))
      ->capture_default_str();
  g->add_option("--n", gen.n, "number of sequences")->capture_default_str();
  g->add_option("--t", gen.t, "sequence length")->capture_default_str();
  g->add_option("--smnr", gen.smnr, "target SMNR in dB")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--out", gen.out, "dataset file")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a DNS variant on the measurements of a dataset");
  t->add_option("--data", tr.data)->required()->check(CLI::ExistingFile);
  t->add_option("--variant", tr.variant)
      ->check(CLI::IsMember({"dns", "dns-s", "dns-noskip"}))
      ->capture_default_str();
  t->add_option("--epochs", tr.epochs, "total epochs (also when resuming)")->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr, "base learning rate")->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--clip", tr.clip, "global gradient-norm clip")->capture_default_str();
  t->add_flag("--bptt", tr.bptt, "backpropagate through the xhat feedback");
  t->add_option("--heldout", tr.heldout, "dataset for held-out loss reporting")->check(CLI::ExistingFile);
  t->add_option("--resume", tr.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "checkpoint file")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "smooth a dataset and report NMSE, ALP and SMNR");
  e->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint)->check(CLI::ExistingFile);
  e->add_flag("--ertss", ev.ertss, "use the extended RTS smoother with the known dynamics");
  e->add_flag("--identity", ev.identity, "use xhat = H^+ y");
  e->add_option("--out", ev.out, "output directory")->required();

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "run a systems x SMNR x methods grid");
  x->add_option("--manifest", ex.manifest, "experiment JSON")->check(CLI::ExistingFile);
  x->add_option("--profile", ex.profile)->check(CLI::IsMember({"desk", "full"}));
  x->add_flag("--save-checkpoints", ex.save_checkpoints);
  x->add_option("--out", ex.out, "output directory")->required();

  ExportArgs pl;
  auto* p = app.add_subcommand("export-plots", "write per-time-step CSV for figures");
  p->add_option("--results", pl.results, "smoothing.dnsarr from evaluate")->required()->check(CLI::ExistingFile);
  p->add_option("--trajectories", pl.trajectories, "dataset file")->required()->check(CLI::ExistingFile);
  p->add_option("--sequences", pl.sequences, "number of sequences to export")->capture_default_str();
  p->add_option("--out", pl.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitInput;
  }

  const auto* cfg_opt = app.get_option("--config");
  const std::string config_path = cfg_opt->count() > 0 ? cfg_opt->as<std::string>() : "";
  try {
    if (g->parsed()) return cmd_generate(gen, config_path);
    if (t->parsed()) return cmd_train(tr, config_path);
    if (e->parsed()) return cmd_evaluate(ev, config_path);
    if (x->parsed()) return cmd_experiment(ex, config_path);
    if (p->parsed()) return cmd_export_plots(pl, config_path);
  } catch (const dns::NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
