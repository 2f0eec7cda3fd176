#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <vector>

#include <json.hpp>

#include "dns/container.hpp"
#include "dns/dataset.hpp"
#include "dns/dra.hpp"
#include "dns/errors.hpp"
#include "dns/optim.hpp"
#include "dns/smoother.hpp"

namespace dns {

inline constexpr int kCheckpointFormatVersion = 1;

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double base_lr = 1e-3;
  double decay = 0.9;
  int decay_every = 33;
  std::uint64_t seed = 0;
  Variant variant = Variant::Dns;
  bool clip = true;
  double clip_norm = 10.0;
  /// Stop gradients at the xhat feedback edge. With full BPTT the network can
  /// learn to carry y_t into the prior at t through xhat_{t-1}, whose prior
  /// saw y_t via the future branch.
  bool detach_feedback = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  /// Negative log-likelihood per time step and per measurement dimension.
  double mean_loss = 0.0;
  double lr = 0.0;
  double heldout_loss = std::numeric_limits<double>::quiet_NaN();
};

using TrainingHistory = std::vector<EpochRecord>;

/// Everything needed to resume: parameters, optimizer moments, RNG, epoch.
struct TrainingState {
  TrainConfig config;
  DraParameters params;
  ad::AdamState adam;
  Rng rng;
  int next_epoch = 0;
  TrainingHistory history;
};

/// Thrown when the loss or gradient goes non-finite. The TrainingState passed
/// to run_epochs still holds the last finite parameters.
class TrainingDivergence : public NumericalError {
 public:
  TrainingDivergence(int epoch, int batch, const std::string& what);
  int epoch;
  int batch;
};

TrainingState init_training(const MeasurementView& data, const TrainConfig& config);

/// Trains epochs [state.next_epoch, until_epoch).
void run_epochs(TrainingState& state, const MeasurementView& data, int until_epoch,
                const std::function<void(const EpochRecord&)>& on_epoch = {},
                const MeasurementView* heldout = nullptr);

struct TrainResult {
  DraParameters params;
  TrainingHistory history;
};

/// Maximizes the summed measurement log-likelihood over the training
/// sequences (as a mean per-step negative log-likelihood per mini-batch).
TrainResult train(const MeasurementView& data, const TrainConfig& config);

/// Negative log-likelihood summed over time, and its parameter gradient.
struct SequenceLoss {
  double nll = 0.0;
  ad::Gradients grads;
};
SequenceLoss sequence_nll_with_grad(const DraParameters& params, const Sequence& y,
                                    const LinearMeasurementModel& model, PassOptions options = {});

/// Mean per-step negative log-likelihood over a set of sequences.
double mean_step_nll(const DraParameters& params, const std::vector<Sequence>& seqs,
                     const LinearMeasurementModel& model);

Container checkpoint_to_container(const TrainingState& state);
TrainingState checkpoint_from_container(const Container& c);
void write_checkpoint(const std::filesystem::path& path, const TrainingState& state);
TrainingState read_checkpoint(const std::filesystem::path& path);

nlohmann::json history_to_json(const TrainingHistory& h);

}  // namespace dns
