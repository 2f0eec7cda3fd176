#pragma once

// Reverse-mode differentiation over a tape of coarse vector primitives.
//
// Nodes hold column vectors. Every primitive records its output value and a
// closure that maps the output adjoint onto its inputs' adjoints and onto the
// parameter gradients. Inputs always precede their consumers on the tape, so a
// reverse index sweep is a reverse topological order.

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dns::ad {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using ParamId = std::int32_t;
using NodeId = std::int32_t;

/// Marks an absent input (zero padding, empty history).
inline constexpr NodeId kNoNode = -1;

struct Tensor {
  std::string name;
  Mat value;  // vectors are stored as n x 1

  std::vector<std::uint64_t> shape() const;
};

class ParameterStore {
 public:
  ParamId add(std::string name, Mat init);
  ParamId id(const std::string& name) const;
  bool contains(const std::string& name) const;

  Mat& value(ParamId p) { return tensors_.at(static_cast<std::size_t>(p)).value; }
  const Mat& value(ParamId p) const { return tensors_.at(static_cast<std::size_t>(p)).value; }
  const std::string& name(ParamId p) const { return tensors_.at(static_cast<std::size_t>(p)).name; }

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }

  bool all_finite() const;

 private:
  std::vector<Tensor> tensors_;
  std::map<std::string, ParamId> index_;
};

/// One gradient matrix per parameter, shaped like the parameter.
struct Gradients {
  std::vector<Mat> values;

  static Gradients zeros_like(const ParameterStore& params);
  void add(const Gradients& other);
  void scale(double s);
  double norm() const;
  bool all_finite() const;
};

enum class Activation { Identity, Tanh, Relu };

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Vec& out_grad)>;

  explicit Tape(const ParameterStore& params);

  const ParameterStore& params() const { return *params_; }

  /// Leaf with no gradient path.
  NodeId constant(Vec value);
  /// Records a node computed from `inputs` (all already on the tape).
  NodeId push(Vec value, std::initializer_list<NodeId> inputs, BackwardFn backward);
  NodeId push(Vec value, std::span<const NodeId> inputs, BackwardFn backward);

  const Vec& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds g to the adjoint of node `id` (fan-out accumulates).
  void accumulate(NodeId id, const Vec& g);
  Mat& param_grad(ParamId p) { return grads_.values[static_cast<std::size_t>(p)]; }

  /// Reverse sweep from a scalar node. Returns d(loss)/d(parameters).
  /// The tape can be swept once.
  Gradients backward(NodeId loss);

 private:
  struct Node {
    Vec value;
    Vec grad;  // empty until something flows into it
    BackwardFn backward;
  };
  void check_inputs(std::span<const NodeId> inputs) const;

  const ParameterStore* params_;
  std::vector<Node> nodes_;
  Gradients grads_;
  bool swept_ = false;
};

// ---------------------------------------------------------------------------
// Pure forward primitives

Vec activate(const Vec& a, Activation act);
Vec dense_forward(const Vec& x, const Mat& W, const Vec& b, Activation act);

/// Numerically stable log(1 + e^x).
double softplus(double x);
Vec softplus(const Vec& x);
double sigmoid(double x);

/// Causal 1-D convolution over a T x d sequence. `kernels` is C x (width*d):
/// column block j multiplies seq[t - (width-1) + j], so the last block is the
/// current-time tap. Times before the start are zero.
Mat causal_conv1d_forward(const Mat& seq, const Mat& kernels, const Vec& bias, int width = 3);

struct GruParams {
  ParamId Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh;
};

/// h' = z * h + (1 - z) * tanh(Wh x + Uh (r * h) + bh)
Vec gru_cell_forward(const Vec& x, const Vec& h, const ParameterStore& params,
                     const GruParams& gru);

// ---------------------------------------------------------------------------
// Tape primitives

NodeId param_vector(Tape& tape, ParamId p);
NodeId dense(Tape& tape, NodeId x, ParamId W, ParamId b, Activation act);
/// One output step of the causal convolution; window[j] = kNoNode means zero.
NodeId conv_step(Tape& tape, std::span<const NodeId> window, ParamId kernels, ParamId bias);
NodeId gru_cell(Tape& tape, NodeId x, NodeId h, const GruParams& gru);
NodeId concat(Tape& tape, std::span<const NodeId> parts);
NodeId add(Tape& tape, NodeId a, NodeId b);
/// scale * x + shift, elementwise with fixed (non-learned) scale and shift.
NodeId affine(Tape& tape, NodeId x, const Vec& scale, const Vec& shift);
NodeId softplus(Tape& tape, NodeId x);
/// Copies the value and cuts the gradient path.
NodeId detach(Tape& tape, NodeId x);
/// scale * sum of scalar nodes.
NodeId sum_scalars(Tape& tape, std::span<const NodeId> scalars, double scale = 1.0);
/// 0.5 * ||p||^2 summed over parameters; used as a test loss.
NodeId half_squared_norm(Tape& tape, std::span<const ParamId> params);

}  // namespace dns::ad
