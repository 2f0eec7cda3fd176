#include "dns/dra.hpp"

#include <cmath>

#include "dns/errors.hpp"
#include "dns/rng.hpp"

namespace dns {

using ad::NodeId;
using ad::ParamId;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Dns: return "dns";
    case Variant::DnsS: return "dns-s";
    case Variant::DnsNoSkip: return "dns-noskip";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "dns") return Variant::Dns;
  if (name == "dns-s") return Variant::DnsS;
  if (name == "dns-noskip") return Variant::DnsNoSkip;
  throw ContractError("unknown variant '" + name + "' (expected dns, dns-s or dns-noskip)");
}

void DraConfig::validate() const {
  require(state_dim >= 1 && meas_dim >= state_dim, "DRA needs meas_dim >= state_dim >= 1");
  require(conv_channels >= 1 && conv_width >= 1 && gru_hidden >= 1 && dense_width >= 1,
          "DRA widths must be positive");
  require(var_floor > 0.0, "variance floor must be positive");
}

nlohmann::json to_json(const DraConfig& c) {
  return {{"variant", to_string(c.variant)}, {"state_dim", c.state_dim},
          {"meas_dim", c.meas_dim},          {"conv_channels", c.conv_channels},
          {"conv_width", c.conv_width},      {"gru_hidden", c.gru_hidden},
          {"dense_width", c.dense_width},    {"var_floor", c.var_floor}};
}

DraConfig dra_config_from_json(const nlohmann::json& j) {
  DraConfig c;
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.state_dim = j.at("state_dim").get<int>();
  c.meas_dim = j.at("meas_dim").get<int>();
  c.conv_channels = j.at("conv_channels").get<int>();
  c.conv_width = j.at("conv_width").get<int>();
  c.gru_hidden = j.at("gru_hidden").get<int>();
  c.dense_width = j.at("dense_width").get<int>();
  c.var_floor = j.at("var_floor").get<double>();
  c.validate();
  return c;
}

Normalizer Normalizer::identity(int state_dim, int meas_dim) {
  return {Vec::Zero(meas_dim), Vec::Ones(meas_dim), Vec::Zero(state_dim), Vec::Ones(state_dim)};
}

Normalizer Normalizer::fit(const std::vector<Sequence>& measurements,
                           const LinearMeasurementModel& model) {
  require(!measurements.empty(), "normalizer needs at least one sequence");
  const auto n = model.meas_dim();
  Vec sum = Vec::Zero(n);
  Vec sq = Vec::Zero(n);
  double count = 0.0;
  for (const auto& y : measurements) {
    require(y.cols() == n, "normalizer: measurement dimension mismatch");
    sum += y.colwise().sum().transpose();
    sq += y.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(y.rows());
  }
  Normalizer norm;
  norm.meas_shift = sum / count;
  const Vec var_y = (sq / count - norm.meas_shift.cwiseProduct(norm.meas_shift)).cwiseMax(0.0);
  norm.meas_scale = var_y.unaryExpr([](double v) { return v > 1e-24 ? std::sqrt(v) : 1.0; });

  const Mat pinv = model.H.completeOrthogonalDecomposition().pseudoInverse();
  norm.state_shift = pinv * norm.meas_shift;
  const Mat signal_cov = Mat(var_y.asDiagonal()) - model.Cw;
  const Vec pulled_signal = (pinv * signal_cov * pinv.transpose()).diagonal();
  const Vec pulled_total = (pinv * Mat(var_y.asDiagonal()) * pinv.transpose()).diagonal();
  norm.state_scale.resize(pinv.rows());
  for (Eigen::Index i = 0; i < pinv.rows(); ++i) {
    const double v = std::max(pulled_signal(i), 0.01 * pulled_total(i));
    norm.state_scale(i) = v > 1e-24 ? std::sqrt(v) : 1.0;
  }
  return norm;
}

namespace {

void branch_shapes(std::vector<std::pair<std::string, std::pair<int, int>>>& out,
                   const std::string& prefix, int input_dim, const DraConfig& c) {
  const int C = c.conv_channels, H = c.gru_hidden;
  out.push_back({prefix + "/conv_kernel", {C, c.conv_width * input_dim}});
  out.push_back({prefix + "/conv_bias", {C, 1}});
  for (const char* gate : {"z", "r", "h"}) {
    out.push_back({prefix + "/gru_W" + gate, {H, C}});
    out.push_back({prefix + "/gru_U" + gate, {H, H}});
    out.push_back({prefix + "/gru_b" + gate, {H, 1}});
  }
  out.push_back({prefix + "/h0", {H, 1}});
}

void stack_shapes(std::vector<std::pair<std::string, std::pair<int, int>>>& out,
                  const std::string& prefix, int input_dim, const DraConfig& c) {
  int in = input_dim;
  for (int layer = 1; layer <= 3; ++layer) {
    out.push_back({prefix + "/W" + std::to_string(layer), {c.dense_width, in}});
    out.push_back({prefix + "/b" + std::to_string(layer), {c.dense_width, 1}});
    in = c.dense_width;
  }
}

bool is_weight_matrix(const std::string& name, const std::pair<int, int>& shape) {
  return shape.second > 1 || name.find("/W") != std::string::npos ||
         name.find("_W") != std::string::npos || name.find("_U") != std::string::npos;
}

}  // namespace

std::vector<std::pair<std::string, std::pair<int, int>>> parameter_shapes(const DraConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, std::pair<int, int>>> shapes;
  branch_shapes(shapes, "future", c.meas_dim, c);
  if (c.has_past_branch()) branch_shapes(shapes, "past", c.meas_dim, c);
  branch_shapes(shapes, "state", c.state_dim, c);
  const int branches = c.has_past_branch() ? 3 : 2;
  stack_shapes(shapes, "trunk", branches * c.gru_hidden, c);
  if (c.has_skip()) stack_shapes(shapes, "skip", c.gru_hidden, c);
  shapes.push_back({"head/mean_W", {c.state_dim, c.dense_width}});
  shapes.push_back({"head/mean_b", {c.state_dim, 1}});
  shapes.push_back({"head/var_W", {c.state_dim, c.dense_width}});
  shapes.push_back({"head/var_b", {c.state_dim, 1}});
  return shapes;
}

std::size_t parameter_count(const DraConfig& config) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    n += static_cast<std::size_t>(shape.first) * static_cast<std::size_t>(shape.second);
  }
  return n;
}

std::size_t skip_parameter_count(const DraConfig& config) {
  if (!config.has_skip()) return 0;
  std::vector<std::pair<std::string, std::pair<int, int>>> shapes;
  stack_shapes(shapes, "skip", config.gru_hidden, config);
  std::size_t n = 0;
  for (const auto& [name, shape] : shapes) {
    n += static_cast<std::size_t>(shape.first) * static_cast<std::size_t>(shape.second);
  }
  return n;
}

DraParameters init_dra(const DraConfig& config, const Normalizer& norm, std::uint64_t seed) {
  require(norm.meas_shift.size() == config.meas_dim && norm.state_shift.size() == config.state_dim,
          "normalizer does not match DRA dimensions");
  DraParameters p{config, {}, norm};
  Rng rng(derive_seed(seed, {0x5eed}));
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Mat value = Mat::Zero(shape.first, shape.second);
    if (is_weight_matrix(name, shape)) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.second));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = u(rng);
    }
    p.store.add(name, std::move(value));
  }
  return p;
}

// ---------------------------------------------------------------------------

DraGraph::DraGraph(ad::Tape& tape, const DraParameters& params)
    : tape_(tape), params_(params) {
  const auto& c = params.config;
  if (c.has_past_branch()) past_ = make_branch("past");
  future_ = make_branch("future");
  state_ = make_branch("state");
  trunk_ = make_stack("trunk");
  if (c.has_skip()) skip_ = make_stack("skip");
  const auto& S = params.store;
  mean_w_ = S.id("head/mean_W");
  mean_b_ = S.id("head/mean_b");
  var_w_ = S.id("head/var_W");
  var_b_ = S.id("head/var_b");

  const auto& nm = params.norm;
  inv_meas_scale_ = nm.meas_scale.cwiseInverse();
  neg_meas_shift_ = -nm.meas_shift.cwiseProduct(inv_meas_scale_);
  inv_state_scale_ = nm.state_scale.cwiseInverse();
  neg_state_shift_ = -nm.state_shift.cwiseProduct(inv_state_scale_);
  var_scale_ = nm.state_scale.cwiseProduct(nm.state_scale);
  var_shift_ = Vec::Constant(c.state_dim, c.var_floor);
}

DraGraph::Branch DraGraph::make_branch(const std::string& prefix) {
  const auto& S = params_.store;
  Branch b;
  b.kernel = S.id(prefix + "/conv_kernel");
  b.bias = S.id(prefix + "/conv_bias");
  b.h0 = S.id(prefix + "/h0");
  b.gru = {S.id(prefix + "/gru_Wz"), S.id(prefix + "/gru_Uz"), S.id(prefix + "/gru_bz"),
           S.id(prefix + "/gru_Wr"), S.id(prefix + "/gru_Ur"), S.id(prefix + "/gru_br"),
           S.id(prefix + "/gru_Wh"), S.id(prefix + "/gru_Uh"), S.id(prefix + "/gru_bh")};
  b.window.assign(static_cast<std::size_t>(params_.config.conv_width), ad::kNoNode);
  return b;
}

DraGraph::DenseStack DraGraph::make_stack(const std::string& prefix) const {
  const auto& S = params_.store;
  DenseStack s;
  for (int layer = 0; layer < 3; ++layer) {
    s.W[static_cast<std::size_t>(layer)] = S.id(prefix + "/W" + std::to_string(layer + 1));
    s.b[static_cast<std::size_t>(layer)] = S.id(prefix + "/b" + std::to_string(layer + 1));
  }
  return s;
}

NodeId DraGraph::run_stack(const DenseStack& s, NodeId x) {
  for (std::size_t layer = 0; layer < 3; ++layer) {
    x = ad::dense(tape_, x, s.W[layer], s.b[layer], ad::Activation::Tanh);
  }
  return x;
}

NodeId DraGraph::advance(Branch& b, NodeId input) {
  std::rotate(b.window.begin(), b.window.begin() + 1, b.window.end());
  b.window.back() = input;
  const NodeId conv = ad::conv_step(tape_, b.window, b.kernel, b.bias);
  if (b.hidden == ad::kNoNode) b.hidden = ad::param_vector(tape_, b.h0);
  b.hidden = ad::gru_cell(tape_, conv, b.hidden, b.gru);
  return b.hidden;
}

NodeId DraGraph::measurement_input(const Vec& y) {
  require(y.size() == params_.config.meas_dim, "measurement dimension does not match DRA");
  return tape_.constant(y.cwiseProduct(inv_meas_scale_) + neg_meas_shift_);
}

NodeId DraGraph::state_input(NodeId xhat) {
  return ad::affine(tape_, xhat, inv_state_scale_, neg_state_shift_);
}

std::vector<NodeId> DraGraph::anticausal_sweep(const Sequence& y) {
  const auto T = y.rows();
  require(T >= 1, "anticausal_sweep needs T >= 1");
  require(y.cols() == params_.config.meas_dim, "measurement dimension does not match DRA");
  std::vector<NodeId> a(static_cast<std::size_t>(T), ad::kNoNode);
  a.back() = ad::param_vector(tape_, future_.h0);
  future_.hidden = a.back();
  for (Eigen::Index idx = T - 1; idx >= 1; --idx) {
    a[static_cast<std::size_t>(idx - 1)] = advance(future_, measurement_input(y.row(idx).transpose()));
  }
  return a;
}

DraGraph::Prior DraGraph::step(NodeId y_prev, NodeId xhat_prev, NodeId future_summary) {
  std::vector<NodeId> parts;
  if (past_) parts.push_back(advance(*past_, y_prev));
  parts.push_back(future_summary);
  const NodeId h_state = advance(state_, xhat_prev);
  parts.push_back(h_state);

  NodeId features = run_stack(trunk_, ad::concat(tape_, parts));
  if (skip_) features = ad::add(tape_, features, run_stack(*skip_, h_state));

  const NodeId mean_raw = ad::dense(tape_, features, mean_w_, mean_b_, ad::Activation::Identity);
  const NodeId var_raw = ad::dense(tape_, features, var_w_, var_b_, ad::Activation::Identity);
  Prior prior;
  prior.mean = ad::affine(tape_, mean_raw, params_.norm.state_scale, params_.norm.state_shift);
  prior.var = ad::affine(tape_, ad::softplus(tape_, var_raw), var_scale_, var_shift_);
  const auto& mv = tape_.value(prior.mean);
  const auto& vv = tape_.value(prior.var);
  if (!mv.allFinite() || !vv.allFinite()) throw NumericalError("DRA produced a non-finite prior");
  return prior;
}

std::vector<Vec> anticausal_sweep(const Sequence& y, const DraParameters& params) {
  ad::Tape tape(params.store);
  DraGraph graph(tape, params);
  const auto nodes = graph.anticausal_sweep(y);
  std::vector<Vec> out;
  out.reserve(nodes.size());
  for (auto id : nodes) out.push_back(tape.value(id));
  return out;
}

}  // namespace dns
