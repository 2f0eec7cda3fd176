#include "dns/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dns/errors.hpp"
#include "dns/parallel.hpp"

namespace dns {

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be at least 1");
  require(batch_size >= 1, "batch size must be at least 1");
  require(base_lr > 0.0, "learning rate must be positive");
  require(decay > 0.0 && decay_every >= 1, "invalid learning-rate decay");
  require(clip_norm > 0.0, "clip norm must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},       {"decay", c.decay},
          {"decay_every", c.decay_every}, {"seed", c.seed},
          {"variant", to_string(c.variant)}, {"clip", c.clip},
          {"clip_norm", c.clip_norm},   {"detach_feedback", c.detach_feedback}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.decay = j.value("decay", c.decay);
  c.decay_every = j.value("decay_every", c.decay_every);
  c.seed = j.value("seed", c.seed);
  c.variant = variant_from_string(j.value("variant", to_string(c.variant)));
  c.clip = j.value("clip", c.clip);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.detach_feedback = j.value("detach_feedback", c.detach_feedback);
  c.validate();
  return c;
}

TrainingDivergence::TrainingDivergence(int e, int b, const std::string& what)
    : NumericalError("training diverged at epoch " + std::to_string(e) + ", batch " +
                     std::to_string(b) + ": " + what),
      epoch(e),
      batch(b) {}

TrainingState init_training(const MeasurementView& data, const TrainConfig& config) {
  config.validate();
  require(data.size() >= 1, "training needs at least one sequence");
  DraConfig arch;
  arch.variant = config.variant;
  arch.state_dim = static_cast<int>(data.model.state_dim());
  arch.meas_dim = static_cast<int>(data.model.meas_dim());
  TrainingState s{config,
                  init_dra(arch, Normalizer::fit(data.measurements, data.model), config.seed),
                  {},
                  Rng(derive_seed(config.seed, {0xba7c4})),
                  0,
                  {}};
  s.adam = ad::AdamState::for_params(s.params.store);
  s.adam.base_lr = config.base_lr;
  s.adam.decay = config.decay;
  s.adam.decay_every = config.decay_every;
  return s;
}

SequenceLoss sequence_nll_with_grad(const DraParameters& params, const Sequence& y,
                                    const LinearMeasurementModel& model, PassOptions options) {
  ad::Tape tape(params.store);
  const auto pass = build_sequence_pass(tape, params, y, model, options);
  const auto loss = ad::sum_scalars(tape, pass.loglik, -1.0);
  SequenceLoss out;
  out.nll = tape.value(loss)(0);
  out.grads = tape.backward(loss);
  return out;
}

double mean_step_nll(const DraParameters& params, const std::vector<Sequence>& seqs,
                     const LinearMeasurementModel& model) {
  double total = 0.0;
  double steps = 0.0;
  for (const auto& y : seqs) {
    total -= sequence_loglik(y, model, params);
    steps += static_cast<double>(y.rows());
  }
  return total / steps;
}

void run_epochs(TrainingState& state, const MeasurementView& data, int until_epoch,
                const std::function<void(const EpochRecord&)>& on_epoch,
                const MeasurementView* heldout) {
  const auto& cfg = state.config;
  require(data.size() >= 1, "training needs at least one sequence");
  check_model_matches(state.params, data.model);
  const PassOptions options{cfg.detach_feedback};
  const auto n_meas = static_cast<double>(data.model.meas_dim());

  std::vector<std::size_t> order(data.size());
  for (int epoch = state.next_epoch; epoch < until_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    const double lr = ad::lr_schedule(epoch, state.adam);
    double epoch_nll = 0.0;
    double epoch_steps = 0.0;
    const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_index) {
      const std::size_t count = std::min(batch_size, order.size() - start);
      std::vector<SequenceLoss> per_seq(count);
      try {
        parallel_for(count, [&](std::size_t k) {
          per_seq[k] = sequence_nll_with_grad(state.params, data.measurements[order[start + k]],
                                              data.model, options);
        });
      } catch (const TrainingDivergence&) {
        throw;
      } catch (const NumericalError& e) {
        throw TrainingDivergence(epoch, batch_index, e.what());
      }
      double batch_nll = 0.0;
      double batch_steps = 0.0;
      auto grads = ad::Gradients::zeros_like(state.params.store);
      for (std::size_t k = 0; k < count; ++k) {
        batch_nll += per_seq[k].nll;
        batch_steps += static_cast<double>(data.measurements[order[start + k]].rows());
        grads.add(per_seq[k].grads);
      }
      if (!std::isfinite(batch_nll)) throw TrainingDivergence(epoch, batch_index, "non-finite loss");
      grads.scale(1.0 / batch_steps);
      if (!grads.all_finite()) throw TrainingDivergence(epoch, batch_index, "non-finite gradient");
      if (cfg.clip) ad::clip_global_norm(grads, cfg.clip_norm);
      ad::adam_step(state.params.store, grads, state.adam, lr);
      if (!state.params.store.all_finite()) {
        throw TrainingDivergence(epoch, batch_index, "non-finite parameters after update");
      }
      epoch_nll += batch_nll;
      epoch_steps += batch_steps;
    }
    EpochRecord rec{epoch, epoch_nll / (epoch_steps * n_meas), lr,
                    std::numeric_limits<double>::quiet_NaN()};
    if (heldout != nullptr) {
      rec.heldout_loss = mean_step_nll(state.params, heldout->measurements, heldout->model) / n_meas;
    }
    state.history.push_back(rec);
    state.next_epoch = epoch + 1;
    if (on_epoch) on_epoch(rec);
  }
}

TrainResult train(const MeasurementView& data, const TrainConfig& config) {
  auto state = init_training(data, config);
  run_epochs(state, data, config.epochs);
  return {std::move(state.params), std::move(state.history)};
}

nlohmann::json history_to_json(const TrainingHistory& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : h) {
    nlohmann::json row = {{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"lr", r.lr}};
    if (std::isfinite(r.heldout_loss)) row["heldout_loss"] = r.heldout_loss;
    arr.push_back(row);
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

NamedArray tensor_array(const std::string& name, const Mat& m) {
  return matrix_to_array(name, m);
}

Vec vector_from(const NamedArray& a) {
  return Eigen::Map<const Vec>(a.values.data(), static_cast<Eigen::Index>(a.values.size()));
}

NamedArray vector_array(const std::string& name, const Vec& v) {
  return {name, {static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())};
}

}  // namespace

Container checkpoint_to_container(const TrainingState& state) {
  Container c;
  std::ostringstream rng_state;
  rng_state << state.rng;
  c.meta = {{"kind", "dns-checkpoint"},
            {"format_version", kCheckpointFormatVersion},
            {"architecture", to_json(state.params.config)},
            {"hyperparameters", to_json(state.config)},
            {"epoch", state.next_epoch},
            {"adam_step", state.adam.step},
            {"rng_state", rng_state.str()},
            {"history", history_to_json(state.history)}};
  const auto& store = state.params.store;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store.tensors()[i];
    c.arrays.push_back(tensor_array("param/" + t.name, t.value));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.tensors()[i].name;
    c.arrays.push_back(tensor_array("adam_m/" + name, state.adam.first_moment[i]));
    c.arrays.push_back(tensor_array("adam_v/" + name, state.adam.second_moment[i]));
  }
  const auto& nm = state.params.norm;
  c.arrays.push_back(vector_array("norm/meas_shift", nm.meas_shift));
  c.arrays.push_back(vector_array("norm/meas_scale", nm.meas_scale));
  c.arrays.push_back(vector_array("norm/state_shift", nm.state_shift));
  c.arrays.push_back(vector_array("norm/state_scale", nm.state_scale));
  return c;
}

TrainingState checkpoint_from_container(const Container& c) {
  if (c.meta.value("kind", "") != "dns-checkpoint") throw FormatError("file is not a DNS checkpoint");
  if (c.meta.value("format_version", 0) != kCheckpointFormatVersion) {
    throw FormatError("unsupported checkpoint format version");
  }
  TrainingState s;
  s.config = train_config_from_json(c.meta.at("hyperparameters"));
  s.params.config = dra_config_from_json(c.meta.at("architecture"));
  s.params.norm = {vector_from(c.at("norm/meas_shift")), vector_from(c.at("norm/meas_scale")),
                   vector_from(c.at("norm/state_shift")), vector_from(c.at("norm/state_scale"))};
  for (const auto& [name, shape] : parameter_shapes(s.params.config)) {
    Mat value = matrix_from_array(c.at("param/" + name));
    if (value.rows() != shape.first || value.cols() != shape.second) {
      throw FormatError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    s.params.store.add(name, std::move(value));
  }
  s.adam = ad::AdamState::for_params(s.params.store);
  s.adam.base_lr = s.config.base_lr;
  s.adam.decay = s.config.decay;
  s.adam.decay_every = s.config.decay_every;
  s.adam.step = c.meta.at("adam_step").get<std::int64_t>();
  for (std::size_t i = 0; i < s.params.store.size(); ++i) {
    const auto& name = s.params.store.tensors()[i].name;
    s.adam.first_moment[i] = matrix_from_array(c.at("adam_m/" + name));
    s.adam.second_moment[i] = matrix_from_array(c.at("adam_v/" + name));
  }
  s.next_epoch = c.meta.at("epoch").get<int>();
  std::istringstream rng_state(c.meta.at("rng_state").get<std::string>());
  rng_state >> s.rng;
  if (!rng_state) throw FormatError("checkpoint RNG state is malformed");
  for (const auto& row : c.meta.at("history")) {
    EpochRecord r;
    r.epoch = row.at("epoch").get<int>();
    r.mean_loss = row.at("mean_loss").get<double>();
    r.lr = row.at("lr").get<double>();
    if (row.contains("heldout_loss")) r.heldout_loss = row.at("heldout_loss").get<double>();
    s.history.push_back(r);
  }
  return s;
}

void write_checkpoint(const std::filesystem::path& path, const TrainingState& state) {
  write_container(path, checkpoint_to_container(state));
}

TrainingState read_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_container(read_container(path));
}

}  // namespace dns
