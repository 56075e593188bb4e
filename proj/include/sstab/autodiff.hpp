#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sstab/error.hpp"
#include "sstab/geometry.hpp"
#include "sstab/mls.hpp"

namespace sstab {

// 1-D convolution hyperparameters. Weights for conv1d are stored as
// C_out x (C_in * k); for conv1d_transposed as C_in x (C_out * k).
struct ConvSpec {
  Eigen::Index kernel = 1;
  Eigen::Index stride = 1;
  Eigen::Index dilation = 1;
  Eigen::Index padding = 0;
  std::string label = "conv";

  Eigen::Index conv_length(Eigen::Index l) const {
    const Eigen::Index span = l + 2 * padding - dilation * (kernel - 1) - 1;
    return span < 0 ? 0 : span / stride + 1;
  }
  Eigen::Index transposed_length(Eigen::Index l) const {
    return (l - 1) * stride - 2 * padding + dilation * (kernel - 1) + 1;
  }
};

namespace kernels {

// (C * k) x L_out patch matrix for a C x L input.
inline Tensor im2col(const Tensor& x, const ConvSpec& s, Eigen::Index l_out) {
  const Eigen::Index c = x.rows(), l = x.cols(), k = s.kernel;
  Tensor col = Tensor::Zero(c * k, l_out);
  for (Eigen::Index ci = 0; ci < c; ++ci)
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index row = ci * k + j;
      for (Eigen::Index o = 0; o < l_out; ++o) {
        const Eigen::Index pos = o * s.stride - s.padding + j * s.dilation;
        if (pos >= 0 && pos < l) col(row, o) = x(ci, pos);
      }
    }
  return col;
}

// Scatter-add adjoint of im2col into a C x L tensor.
inline Tensor col2im(const Tensor& col, Eigen::Index c, Eigen::Index l, const ConvSpec& s) {
  const Eigen::Index k = s.kernel, l_out = col.cols();
  Tensor x = Tensor::Zero(c, l);
  for (Eigen::Index ci = 0; ci < c; ++ci)
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index row = ci * k + j;
      for (Eigen::Index o = 0; o < l_out; ++o) {
        const Eigen::Index pos = o * s.stride - s.padding + j * s.dilation;
        if (pos >= 0 && pos < l) x(ci, pos) += col(row, o);
      }
    }
  return x;
}

inline void check_spec(const ConvSpec& s) {
  if (s.kernel < 1 || s.stride < 1 || s.dilation < 1 || s.padding < 0)
    throw ShapeError(s.label + ": invalid convolution hyperparameters");
}

inline Tensor conv1d(const Tensor& x, const Tensor& w, const ConvSpec& s) {
  check_spec(s);
  if (w.cols() != x.rows() * s.kernel)
    throw ShapeError(s.label + ": weight expects " + std::to_string(w.cols() / s.kernel) + " input channels, got " +
                     std::to_string(x.rows()));
  const Eigen::Index l_out = s.conv_length(x.cols());
  if (l_out < 1) throw ShapeError(s.label + ": input length " + std::to_string(x.cols()) + " too short");
  Tensor out = w * im2col(x, s, l_out);
  return out;
}

inline Tensor conv1d_transposed(const Tensor& y, const Tensor& w, const ConvSpec& s) {
  check_spec(s);
  if (w.rows() != y.rows() || w.cols() % s.kernel != 0)
    throw ShapeError(s.label + ": weight expects " + std::to_string(w.rows()) + " input channels, got " +
                     std::to_string(y.rows()));
  const Eigen::Index c_out = w.cols() / s.kernel;
  const Eigen::Index l_out = s.transposed_length(y.cols());
  if (l_out < 1 || s.conv_length(l_out) != y.cols())
    throw ShapeError(s.label + ": input length " + std::to_string(y.cols()) + " incompatible");
  Tensor cols = w.transpose() * y;
  return col2im(cols, c_out, l_out, s);
}

}  // namespace kernels

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }
  Var parameter(Tensor value) { return leaf(std::move(value), true); }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool has_grad(Var v) const { return nodes_.at(v.id).grad.size() > 0; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a 1x1 output. Gradients are only materialised for
  // nodes that depend on a parameter.
  void backward(Var out) {
    Node& root = nodes_.at(out.id);
    if (root.value.rows() != 1 || root.value.cols() != 1)
      throw ContractError("backward: output must be scalar, got " + std::to_string(root.value.rows()) + "x" +
                          std::to_string(root.value.cols()));
    backward(out, Tensor::Ones(1, 1));
  }

  // Vector-Jacobian product: propagates `seed` (shaped like `out`) backwards.
  void backward(Var out, const Tensor& seed) {
    Node& root = nodes_.at(out.id);
    if (seed.rows() != root.value.rows() || seed.cols() != root.value.cols())
      throw ShapeError("backward: seed shape mismatch");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!root.requires_grad) return;
    root.grad = seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  // --- primitives ---------------------------------------------------------

  Var conv1d(Var x, Var w, const ConvSpec& s) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    kernels::check_spec(s);
    if (wv.cols() != xv.rows() * s.kernel)
      throw ShapeError(s.label + ": weight expects " + std::to_string(wv.cols() / s.kernel) +
                       " input channels, got " + std::to_string(xv.rows()));
    const Eigen::Index l_out = s.conv_length(xv.cols());
    if (l_out < 1) throw ShapeError(s.label + ": input length " + std::to_string(xv.cols()) + " too short");
    Tensor col = kernels::im2col(xv, s, l_out);
    Tensor out = wv * col;
    const Eigen::Index c = xv.rows(), l = xv.cols();
    return op(std::move(out), {x, w}, [x, w, s, c, l, col = std::move(col)](Tape& t, const Tensor& g) {
      if (t.requires_grad(w)) t.accumulate(w, g * col.transpose());
      if (t.requires_grad(x)) t.accumulate(x, kernels::col2im(t.value(w).transpose() * g, c, l, s));
    });
  }

  Var conv1d_transposed(Var y, Var w, const ConvSpec& s) {
    Tensor out = kernels::conv1d_transposed(value(y), value(w), s);
    return op(std::move(out), {y, w}, [y, w, s](Tape& t, const Tensor& g) {
      Tensor col = kernels::im2col(g, s, t.value(y).cols());
      if (t.requires_grad(w)) t.accumulate(w, t.value(y) * col.transpose());
      if (t.requires_grad(y)) t.accumulate(y, t.value(w) * col);
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const Eigen::Index cols = value(parts.front()).cols();
    Eigen::Index rows = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
      rows += value(p).rows();
    }
    Tensor out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (Var p : parts) {
      offsets.push_back(at);
      out.middleRows(at, value(p).rows()) = value(p);
      at += value(p).rows();
    }
    return op(std::move(out), parts, [parts, offsets](Tape& t, const Tensor& g) {
      for (std::size_t i = 0; i < parts.size(); ++i)
        if (t.requires_grad(parts[i])) t.accumulate(parts[i], g.middleRows(offsets[i], t.value(parts[i]).rows()));
    });
  }

  Var rows(Var x, Eigen::Index begin, Eigen::Index count) {
    const Tensor& xv = value(x);
    if (begin < 0 || count < 0 || begin + count > xv.rows()) throw ShapeError("rows: slice out of range");
    Tensor out = xv.middleRows(begin, count);
    const Eigen::Index r = xv.rows(), c = xv.cols();
    return op(std::move(out), {x}, [x, begin, count, r, c](Tape& t, const Tensor& g) {
      Tensor full = Tensor::Zero(r, c);
      full.middleRows(begin, count) = g;
      t.accumulate(x, full);
    });
  }

  Var scale(Var x, double s) {
    return op(value(x) * s, {x}, [x, s](Tape& t, const Tensor& g) { t.accumulate(x, g * s); });
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    return op(value(a) + value(b), {a, b}, [a, b](Tape& t, const Tensor& g) {
      if (t.requires_grad(a)) t.accumulate(a, g);
      if (t.requires_grad(b)) t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    return op(value(a) - value(b), {a, b}, [a, b](Tape& t, const Tensor& g) {
      if (t.requires_grad(a)) t.accumulate(a, g);
      if (t.requires_grad(b)) t.accumulate(b, -g);
    });
  }

  // Rigid MLS warp of the plan's queries with node targets `targets` (2 x M).
  Var mls_warp(const MlsPlan& plan, Var targets) {
    auto cache = std::make_shared<MlsPlan::Cache>();
    PointSet out = plan.apply(value(targets), cache.get());
    return op(std::move(out), {targets}, [&plan, targets, cache](Tape& t, const Tensor& g) {
      PointSet gt = PointSet::Zero(2, plan.node_count());
      plan.backward(*cache, g, gt);
      t.accumulate(targets, gt);
    });
  }

  // 1 x N Euclidean norms of the columns. Zero columns get a zero subgradient.
  Var column_norms(Var x) {
    const Tensor& xv = value(x);
    Tensor out = xv.colwise().norm();
    Tensor norms = out;
    return op(std::move(out), {x}, [x, norms](Tape& t, const Tensor& g) {
      const Tensor& xv = t.value(x);
      Tensor gx = Tensor::Zero(xv.rows(), xv.cols());
      for (Eigen::Index j = 0; j < xv.cols(); ++j)
        if (norms(0, j) > 0.0) gx.col(j) = xv.col(j) * (g(0, j) / norms(0, j));
      t.accumulate(x, gx);
    });
  }

  // Frobenius norm as a 1x1 tensor.
  Var frobenius(Var x) {
    const double n = value(x).norm();
    Tensor out = Tensor::Constant(1, 1, n);
    return op(std::move(out), {x}, [x, n](Tape& t, const Tensor& g) {
      if (n > 0.0) t.accumulate(x, t.value(x) * (g(0, 0) / n));
    });
  }

  Var sum(Var x) {
    Tensor out = Tensor::Constant(1, 1, value(x).sum());
    const Eigen::Index r = value(x).rows(), c = value(x).cols();
    return op(std::move(out), {x}, [x, r, c](Tape& t, const Tensor& g) {
      t.accumulate(x, Tensor::Constant(r, c, g(0, 0)));
    });
  }

 private:
  using Backward = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Var op(Tensor value, const std::vector<Var>& inputs, Backward bw) {
    Node n;
    n.value = std::move(value);
    for (Var v : inputs) {
      if (v.tape != this) throw ContractError("variable belongs to a different tape");
      n.requires_grad = n.requires_grad || requires_grad(v);
    }
    if (n.requires_grad) n.backward = std::move(bw);
    return push(std::move(n));
  }

  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  void check_same(Var a, Var b, const char* what) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw ShapeError(std::string(what) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

struct ValueAndGrad {
  double value = 0.0;
  std::vector<Tensor> grads;
};

// Evaluates f on a fresh tape with `params` as differentiable leaves.
template <class F>
ValueAndGrad value_and_grad(F&& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  Var out = f(tape, vars);
  tape.backward(out);
  ValueAndGrad r;
  r.value = tape.value(out)(0, 0);
  for (Var v : vars)
    r.grads.push_back(tape.has_grad(v) ? tape.grad(v) : Tensor::Zero(tape.value(v).rows(), tape.value(v).cols()));
  return r;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : cfg(c) {}
};

inline void adam_step(AdamState& st, std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.push_back(Tensor::Zero(p.rows(), p.cols()));
      st.v.push_back(Tensor::Zero(p.rows(), p.cols()));
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols() ||
        st.m[i].rows() != params[i].rows() || st.m[i].cols() != params[i].cols())
      throw ShapeError("adam: shape mismatch at parameter " + std::to_string(i));
  ++st.step;
  const auto& c = st.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * grads[i];
    st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= c.lr * (st.m[i].array() / bc1) / ((st.v[i].array() / bc2).sqrt() + c.eps);
  }
}

}  // namespace sstab
