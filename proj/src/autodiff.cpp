#include "dns/autodiff.hpp"

#include <cmath>

#include "dns/errors.hpp"

namespace dns::ad {

std::vector<std::uint64_t> Tensor::shape() const {
  if (value.cols() == 1) return {static_cast<std::uint64_t>(value.rows())};
  return {static_cast<std::uint64_t>(value.rows()), static_cast<std::uint64_t>(value.cols())};
}

ParamId ParameterStore::add(std::string name, Mat init) {
  require(!index_.contains(name), "duplicate parameter name '" + name + "'");
  const auto id = static_cast<ParamId>(tensors_.size());
  index_.emplace(name, id);
  tensors_.push_back({std::move(name), std::move(init)});
  return id;
}

ParamId ParameterStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return it->second;
}

bool ParameterStore::contains(const std::string& name) const { return index_.contains(name); }

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool ParameterStore::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

Gradients Gradients::zeros_like(const ParameterStore& params) {
  Gradients g;
  g.values.reserve(params.size());
  for (const auto& t : params.tensors()) g.values.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
  return g;
}

void Gradients::add(const Gradients& other) {
  require(values.size() == other.values.size(), "gradient sets differ in size");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
}

void Gradients::scale(double s) {
  for (auto& v : values) v *= s;
}

double Gradients::norm() const {
  double acc = 0.0;
  for (const auto& v : values) acc += v.squaredNorm();
  return std::sqrt(acc);
}

bool Gradients::all_finite() const {
  for (const auto& v : values) {
    if (!v.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

Tape::Tape(const ParameterStore& params)
    : params_(&params), grads_(Gradients::zeros_like(params)) {
  nodes_.reserve(1024);
}

NodeId Tape::constant(Vec value) {
  nodes_.push_back({std::move(value), Vec(), nullptr});
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_inputs(std::span<const NodeId> inputs) const {
  for (NodeId in : inputs) {
    if (in == kNoNode) continue;
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw ContractError("tape input refers to a node that is not yet recorded");
    }
  }
}

NodeId Tape::push(Vec value, std::initializer_list<NodeId> inputs, BackwardFn backward) {
  return push(std::move(value), std::span<const NodeId>(inputs.begin(), inputs.size()),
              std::move(backward));
}

NodeId Tape::push(Vec value, std::span<const NodeId> inputs, BackwardFn backward) {
  check_inputs(inputs);
  nodes_.push_back({std::move(value), Vec(), std::move(backward)});
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::accumulate(NodeId id, const Vec& g) {
  if (id == kNoNode) return;
  auto& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

Gradients Tape::backward(NodeId loss) {
  require(!swept_, "tape has already been swept");
  require(loss >= 0 && static_cast<std::size_t>(loss) < nodes_.size(), "loss node out of range");
  require(nodes_[static_cast<std::size_t>(loss)].value.size() == 1, "loss must be a scalar node");
  swept_ = true;
  nodes_[static_cast<std::size_t>(loss)].grad = Vec::Ones(1);
  for (auto i = static_cast<std::ptrdiff_t>(loss); i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.grad.size() == 0 || !node.backward) continue;
    // The closure may append to other nodes' grads but never to this one.
    const Vec g = std::move(node.grad);
    node.backward(*this, g);
  }
  return std::move(grads_);
}

// ---------------------------------------------------------------------------
// Forward primitives

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Vec softplus(const Vec& x) { return x.unaryExpr([](double v) { return softplus(v); }); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec activate(const Vec& a, Activation act) {
  switch (act) {
    case Activation::Identity: return a;
    case Activation::Tanh: return a.array().tanh();
    case Activation::Relu: return a.cwiseMax(0.0);
  }
  return a;
}

Vec dense_forward(const Vec& x, const Mat& W, const Vec& b, Activation act) {
  require(W.cols() == x.size() && W.rows() == b.size(), "dense: shape mismatch");
  Vec a = b;
  a.noalias() += W * x;
  return activate(a, act);
}

Mat causal_conv1d_forward(const Mat& seq, const Mat& kernels, const Vec& bias, int width) {
  const auto d = seq.cols();
  require(width >= 1 && kernels.cols() == width * d, "conv: kernel width does not match input");
  require(kernels.rows() == bias.size(), "conv: bias does not match channel count");
  Mat out(seq.rows(), kernels.rows());
  for (Eigen::Index t = 0; t < seq.rows(); ++t) {
    Vec acc = bias;
    for (int j = 0; j < width; ++j) {
      const Eigen::Index src = t - (width - 1) + j;
      if (src < 0) continue;
      acc.noalias() += kernels.middleCols(j * d, d) * seq.row(src).transpose();
    }
    out.row(t) = acc.transpose();
  }
  return out;
}

namespace {

struct GruIntermediates {
  Vec z, r, rh, htilde, out;
};

GruIntermediates gru_compute(const Vec& x, const Vec& h, const ParameterStore& P,
                             const GruParams& g) {
  require(P.value(g.Wz).cols() == x.size() && P.value(g.Uz).cols() == h.size() &&
              P.value(g.Uz).rows() == h.size(),
          "gru: shape mismatch");
  GruIntermediates s;
  Vec az = P.value(g.bz);
  az.noalias() += P.value(g.Wz) * x;
  az.noalias() += P.value(g.Uz) * h;
  Vec ar = P.value(g.br);
  ar.noalias() += P.value(g.Wr) * x;
  ar.noalias() += P.value(g.Ur) * h;
  s.z = az.unaryExpr([](double v) { return sigmoid(v); });
  s.r = ar.unaryExpr([](double v) { return sigmoid(v); });
  s.rh = s.r.cwiseProduct(h);
  Vec ah = P.value(g.bh);
  ah.noalias() += P.value(g.Wh) * x;
  ah.noalias() += P.value(g.Uh) * s.rh;
  s.htilde = ah.array().tanh();
  s.out = s.z.cwiseProduct(h) + (Vec::Ones(h.size()) - s.z).cwiseProduct(s.htilde);
  return s;
}

}  // namespace

Vec gru_cell_forward(const Vec& x, const Vec& h, const ParameterStore& params,
                     const GruParams& gru) {
  return gru_compute(x, h, params, gru).out;
}

// ---------------------------------------------------------------------------
// Tape primitives

NodeId param_vector(Tape& tape, ParamId p) {
  const Mat& v = tape.params().value(p);
  require(v.cols() == 1, "param_vector needs a vector parameter");
  return tape.push(Vec(v), {}, [p](Tape& t, const Vec& g) { t.param_grad(p) += g; });
}

NodeId dense(Tape& tape, NodeId x, ParamId W, ParamId b, Activation act) {
  const auto& P = tape.params();
  Vec out = dense_forward(tape.value(x), P.value(W), P.value(b), act);
  Vec saved = out;
  return tape.push(std::move(out), {x}, [x, W, b, act, y = std::move(saved)](Tape& t, const Vec& g) {
    Vec da;
    switch (act) {
      case Activation::Identity: da = g; break;
      case Activation::Tanh: da = g.cwiseProduct((1.0 - y.array().square()).matrix()); break;
      case Activation::Relu: da = (y.array() > 0.0).select(g, 0.0); break;
    }
    const Vec& xin = t.value(x);
    t.param_grad(W).noalias() += da * xin.transpose();
    t.param_grad(b) += da;
    t.accumulate(x, t.params().value(W).transpose() * da);
  });
}

NodeId conv_step(Tape& tape, std::span<const NodeId> window, ParamId kernels, ParamId bias) {
  const auto& K = tape.params().value(kernels);
  const auto width = static_cast<Eigen::Index>(window.size());
  require(width >= 1 && K.cols() % width == 0, "conv_step: kernel does not match window");
  const auto d = K.cols() / width;
  Vec out = tape.params().value(bias);
  for (Eigen::Index j = 0; j < width; ++j) {
    if (window[static_cast<std::size_t>(j)] == kNoNode) continue;
    const Vec& xj = tape.value(window[static_cast<std::size_t>(j)]);
    require(xj.size() == d, "conv_step: input dimension mismatch");
    out.noalias() += K.middleCols(j * d, d) * xj;
  }
  std::vector<NodeId> win(window.begin(), window.end());
  return tape.push(std::move(out), window, [win, kernels, bias, d](Tape& t, const Vec& g) {
    t.param_grad(bias) += g;
    const Mat& Kv = t.params().value(kernels);
    for (std::size_t j = 0; j < win.size(); ++j) {
      if (win[j] == kNoNode) continue;
      const auto col = static_cast<Eigen::Index>(j) * d;
      t.param_grad(kernels).middleCols(col, d).noalias() += g * t.value(win[j]).transpose();
      t.accumulate(win[j], Kv.middleCols(col, d).transpose() * g);
    }
  });
}

NodeId gru_cell(Tape& tape, NodeId x, NodeId h, const GruParams& gru) {
  auto s = gru_compute(tape.value(x), tape.value(h), tape.params(), gru);
  Vec out = s.out;
  return tape.push(std::move(out), {x, h}, [x, h, gru, s = std::move(s)](Tape& t, const Vec& g) {
    const auto& P = t.params();
    const Vec& xin = t.value(x);
    const Vec& hin = t.value(h);
    const auto ones = Vec::Ones(hin.size());

    Vec dh = g.cwiseProduct(s.z);
    const Vec dz = g.cwiseProduct(hin - s.htilde);
    const Vec dht = g.cwiseProduct(ones - s.z);

    const Vec dah = dht.cwiseProduct((1.0 - s.htilde.array().square()).matrix());
    t.param_grad(gru.Wh).noalias() += dah * xin.transpose();
    t.param_grad(gru.Uh).noalias() += dah * s.rh.transpose();
    t.param_grad(gru.bh) += dah;
    Vec dx = P.value(gru.Wh).transpose() * dah;
    const Vec drh = P.value(gru.Uh).transpose() * dah;
    const Vec dr = drh.cwiseProduct(hin);
    dh += drh.cwiseProduct(s.r);

    const Vec daz = dz.cwiseProduct(s.z.cwiseProduct(ones - s.z));
    t.param_grad(gru.Wz).noalias() += daz * xin.transpose();
    t.param_grad(gru.Uz).noalias() += daz * hin.transpose();
    t.param_grad(gru.bz) += daz;
    dx.noalias() += P.value(gru.Wz).transpose() * daz;
    dh.noalias() += P.value(gru.Uz).transpose() * daz;

    const Vec dar = dr.cwiseProduct(s.r.cwiseProduct(ones - s.r));
    t.param_grad(gru.Wr).noalias() += dar * xin.transpose();
    t.param_grad(gru.Ur).noalias() += dar * hin.transpose();
    t.param_grad(gru.br) += dar;
    dx.noalias() += P.value(gru.Wr).transpose() * dar;
    dh.noalias() += P.value(gru.Ur).transpose() * dar;

    t.accumulate(x, dx);
    t.accumulate(h, dh);
  });
}

NodeId concat(Tape& tape, std::span<const NodeId> parts) {
  Eigen::Index total = 0;
  for (NodeId p : parts) total += tape.value(p).size();
  Vec out(total);
  std::vector<std::pair<NodeId, Eigen::Index>> layout;
  Eigen::Index pos = 0;
  for (NodeId p : parts) {
    const Vec& v = tape.value(p);
    out.segment(pos, v.size()) = v;
    layout.emplace_back(p, v.size());
    pos += v.size();
  }
  return tape.push(std::move(out), parts, [layout](Tape& t, const Vec& g) {
    Eigen::Index off = 0;
    for (const auto& [id, len] : layout) {
      t.accumulate(id, g.segment(off, len));
      off += len;
    }
  });
}

NodeId add(Tape& tape, NodeId a, NodeId b) {
  require(tape.value(a).size() == tape.value(b).size(), "add: size mismatch");
  Vec out = tape.value(a) + tape.value(b);
  return tape.push(std::move(out), {a, b}, [a, b](Tape& t, const Vec& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

NodeId affine(Tape& tape, NodeId x, const Vec& scale, const Vec& shift) {
  const Vec& xv = tape.value(x);
  require(scale.size() == xv.size() && shift.size() == xv.size(), "affine: size mismatch");
  Vec out = scale.cwiseProduct(xv) + shift;
  return tape.push(std::move(out), {x}, [x, scale](Tape& t, const Vec& g) {
    t.accumulate(x, scale.cwiseProduct(g));
  });
}

NodeId softplus(Tape& tape, NodeId x) {
  Vec out = softplus(tape.value(x));
  return tape.push(std::move(out), {x}, [x](Tape& t, const Vec& g) {
    const Vec s = t.value(x).unaryExpr([](double v) { return sigmoid(v); });
    t.accumulate(x, g.cwiseProduct(s));
  });
}

NodeId detach(Tape& tape, NodeId x) { return tape.constant(tape.value(x)); }

NodeId sum_scalars(Tape& tape, std::span<const NodeId> scalars, double scale) {
  double acc = 0.0;
  for (NodeId s : scalars) {
    require(tape.value(s).size() == 1, "sum_scalars: non-scalar input");
    acc += tape.value(s)(0);
  }
  std::vector<NodeId> ids(scalars.begin(), scalars.end());
  return tape.push(Vec::Constant(1, scale * acc), scalars, [ids, scale](Tape& t, const Vec& g) {
    const Vec gs = Vec::Constant(1, scale * g(0));
    for (NodeId s : ids) t.accumulate(s, gs);
  });
}

NodeId half_squared_norm(Tape& tape, std::span<const ParamId> params) {
  double acc = 0.0;
  for (ParamId p : params) acc += 0.5 * tape.params().value(p).squaredNorm();
  std::vector<ParamId> ids(params.begin(), params.end());
  return tape.push(Vec::Constant(1, acc), {}, [ids](Tape& t, const Vec& g) {
    for (ParamId p : ids) t.param_grad(p) += g(0) * t.params().value(p);
  });
}

}  // namespace dns::ad
