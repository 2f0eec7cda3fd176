#pragma once

// Deep recurrent architecture producing the Gaussian prior (m_t, diag L_t).
//
// Three conv + GRU branches:
//   future  - runs once over the reversed measurements; a_t summarizes y_{t+1:T}
//   past    - steps forward over (0, y_1, ..., y_{t-1})      [DNS, DNS-noskip]
//   state   - steps forward over (0, xhat_1, ..., xhat_{t-1})
// The branch hiddens are concatenated into a 3-layer trunk. The state hidden
// also feeds a 3-layer skip stack whose output is added to the trunk output
// [DNS, DNS-S]. Linear heads give the mean and (through softplus) the variance.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dns/autodiff.hpp"
#include "dns/gaussian.hpp"
#include "dns/systems.hpp"

namespace dns {

enum class Variant { Dns, DnsS, DnsNoSkip };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct DraConfig {
  Variant variant = Variant::Dns;
  int state_dim = 3;
  int meas_dim = 3;
  int conv_channels = 16;
  int conv_width = 3;
  int gru_hidden = 30;
  int dense_width = 32;
  double var_floor = 1e-6;

  bool has_past_branch() const { return variant != Variant::DnsS; }
  bool has_skip() const { return variant != Variant::DnsNoSkip; }
  void validate() const;
};

nlohmann::json to_json(const DraConfig& c);
DraConfig dra_config_from_json(const nlohmann::json& j);

/// Fixed input/output scaling: network inputs are (v - shift) / scale, the
/// mean head output is mapped back through state scale/shift and the variance
/// head is multiplied by state_scale^2. Fitted from measurements only.
struct Normalizer {
  Vec meas_shift, meas_scale;
  Vec state_shift, state_scale;

  static Normalizer identity(int state_dim, int meas_dim);
  /// Shift and scale from measurement moments; the state scale removes the
  /// known noise variance before pulling back through H.
  static Normalizer fit(const std::vector<Sequence>& measurements,
                        const LinearMeasurementModel& model);
};

/// All learnable tensors of the architecture plus the fixed normalizer.
struct DraParameters {
  DraConfig config;
  ad::ParameterStore store;
  Normalizer norm;
};

struct PriorParams {
  Vec mean;
  Vec var_diag;

  Mat cov() const { return var_diag.asDiagonal(); }
};

/// Declared tensor shapes for a configuration, in registration order.
std::vector<std::pair<std::string, std::pair<int, int>>> parameter_shapes(const DraConfig& config);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases and zero
/// initial hidden states.
DraParameters init_dra(const DraConfig& config, const Normalizer& norm, std::uint64_t seed);

std::size_t parameter_count(const DraConfig& config);
std::size_t skip_parameter_count(const DraConfig& config);

/// Builds the architecture for one sequence on a tape.
class DraGraph {
 public:
  DraGraph(ad::Tape& tape, const DraParameters& params);

  /// Runs the future branch over y_T, ..., y_2. Returns a_1..a_T; a_T is the
  /// learned initial hidden state.
  std::vector<ad::NodeId> anticausal_sweep(const Sequence& y);

  /// Advances the causal branches by one step and emits the prior for the
  /// next time index. `y_prev` and `xhat_prev` are kNoNode at t = 1.
  struct Prior {
    ad::NodeId mean;
    ad::NodeId var;
  };
  Prior step(ad::NodeId y_prev, ad::NodeId xhat_prev, ad::NodeId future_summary);

  /// Normalized-input constant for a measurement.
  ad::NodeId measurement_input(const Vec& y);
  /// Normalized-input node for an estimated state on the tape.
  ad::NodeId state_input(ad::NodeId xhat);

 private:
  struct Branch {
    ad::ParamId kernel, bias, h0;
    ad::GruParams gru;
    std::vector<ad::NodeId> window;  // last conv_width inputs, oldest first
    ad::NodeId hidden = ad::kNoNode;
  };
  Branch make_branch(const std::string& prefix);
  ad::NodeId advance(Branch& b, ad::NodeId input);
  struct DenseStack {
    std::array<ad::ParamId, 3> W, b;
  };
  DenseStack make_stack(const std::string& prefix) const;
  ad::NodeId run_stack(const DenseStack& s, ad::NodeId x);

  ad::Tape& tape_;
  const DraParameters& params_;
  std::optional<Branch> past_;
  Branch future_;
  Branch state_;
  DenseStack trunk_;
  std::optional<DenseStack> skip_;
  ad::ParamId mean_w_, mean_b_, var_w_, var_b_;
  Vec inv_meas_scale_, neg_meas_shift_;
  Vec inv_state_scale_, neg_state_shift_;
  Vec var_scale_, var_shift_;
};

/// Value-level future branch: a_1..a_T.
std::vector<Vec> anticausal_sweep(const Sequence& y, const DraParameters& params);

}  // namespace dns
