#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <random>
#include <vector>

#include "sstab/autodiff.hpp"
#include "sstab/network.hpp"
#include "sstab/objective.hpp"
#include "sstab/tracks.hpp"

namespace sstab {

struct SolverReport {
  WindowDisplacements displacements;
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::size_t iterations = 0;
  double wall_ms = 0.0;
  double lambda = 0.0;  // effective lambda used for the window
};

// Windows with any missing face are solved with the background term only.
inline double effective_lambda(const TrackWindow& w, double lambda) { return w.all_faces_valid() ? lambda : 0.0; }

inline double weighted_loss(const WindowPlan& plan, const WindowDisplacements& d, double lambda) {
  const double lb = plan.background_loss(d);
  return lambda > 0.0 ? combine(lb, plan.foreground_loss(d), lambda).total : lb;
}

// ---------------------------------------------------------------------------
// Direct optimisation over node displacements

struct DirectOptions {
  std::size_t iterations = 1000;
  AdamConfig adam{0.1, 0.9, 0.99, 1e-8};
  double early_exit = 1e-9;
  ObjectiveConfig objective;
};

inline SolverReport solve_direct(const TrackWindow& window, double lambda, const DirectOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  check_lambda(lambda);
  WindowPlan plan(window, opts.objective);
  const double lam = effective_lambda(window, lambda);
  std::vector<Tensor> disp = zero_displacements(window);
  AdamState adam(opts.adam);
  SolverReport r;
  r.lambda = lam;
  r.displacements = disp;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it <= opts.iterations; ++it) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& d : disp) vars.push_back(tape.parameter(d));
    Var loss = plan.on_tape(tape, vars, lam).total;
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value)) throw DivergenceError(it, "direct solver diverged at iterate " + std::to_string(it));
    if (it == 0) r.loss_before = value;
    r.iterations = it + 1;
    if (value < best) {
      best = value;
      r.displacements = disp;
    }
    if (value < opts.early_exit || it == opts.iterations) break;
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (Var v : vars) grads.push_back(tape.grad(v));
    adam_step(adam, disp, grads);
  }
  r.loss_after = best;
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------
// Network solver

inline SolverReport solve_network(const TrackWindow& window, double lambda, const NetWeights& weights,
                                  const ObjectiveConfig& cfg = {}, bool evaluate = true) {
  const auto start = std::chrono::steady_clock::now();
  check_lambda(lambda);
  if (window.length() != weights.window)
    throw ShapeError("network expects window length " + std::to_string(weights.window) + ", got " +
                     std::to_string(window.length()));
  NetInput in = make_net_input(window, lambda);
  SolverReport r;
  r.lambda = in.lambda;
  r.displacements = net_forward(in, weights);
  r.iterations = 1;
  if (evaluate) {
    WindowPlan plan(window, cfg);
    r.loss_before = weighted_loss(plan, zero_displacements(window), r.lambda);
    r.loss_after = weighted_loss(plan, r.displacements, r.lambda);
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Interchangeable per-window solver handle.
class WindowSolver {
 public:
  virtual ~WindowSolver() = default;
  virtual SolverReport solve(const TrackWindow& window, double lambda) const = 0;
};

class DirectSolver : public WindowSolver {
 public:
  explicit DirectSolver(DirectOptions opts = {}) : opts_(std::move(opts)) {}
  SolverReport solve(const TrackWindow& window, double lambda) const override {
    return solve_direct(window, lambda, opts_);
  }

 private:
  DirectOptions opts_;
};

class NetworkSolver : public WindowSolver {
 public:
  explicit NetworkSolver(NetWeights weights, ObjectiveConfig cfg = {}) : weights_(std::move(weights)), cfg_(cfg) {
    weights_.validate();
  }
  SolverReport solve(const TrackWindow& window, double lambda) const override {
    return solve_network(window, lambda, weights_, cfg_);
  }

 private:
  NetWeights weights_;
  ObjectiveConfig cfg_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t epochs = 30;
  AdamConfig adam{1e-4, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 1;
  bool augment = true;
  AugmentRanges ranges;
  bool permute = true;
  ObjectiveConfig objective;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_baseline = 0.0;  // same samples at zero displacement
};

struct TrainResult {
  NetWeights weights;
  std::vector<EpochStats> curve;
};

// Column permutation per frame pair (P_t, Q_{t+1}) and one shared
// permutation for the face vertices.
inline TrackWindow permute_window(const TrackWindow& w, Rng& rng) {
  TrackWindow out = w;
  const auto n = static_cast<Eigen::Index>(w.point_count());
  auto draw = [&] {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  };
  auto take = [](const PointSet& s, const std::vector<Eigen::Index>& idx) {
    PointSet o(2, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) o.col(static_cast<Eigen::Index>(j)) = s.col(idx[j]);
    return o;
  };
  for (std::size_t k = 0; k + 1 < w.length(); ++k) {
    const auto idx = draw();
    out.frames[k].p = take(*w.frames[k].p, idx);
    out.frames[k + 1].q = take(*w.frames[k + 1].q, idx);
  }
  if (w.frames.front().face) {
    const auto fidx = draw();
    for (auto& f : out.frames)
      if (f.face) f.face = take(*f.face, fidx);
  }
  return out;
}

// One differentiable evaluation of the network loss on a window.
struct NetLoss {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

inline NetLoss network_loss_and_grad(const WindowPlan& plan, double lambda, const std::vector<LayerSpec>& layers,
                                     const std::vector<Tensor>& params, std::size_t t) {
  NetInput in = make_net_input(plan.window(), lambda);
  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  Var out = net_forward_tape(tape, in, layers, vars, t);
  std::vector<Var> disp;
  for (std::size_t k = 0; k + 2 < t; ++k) disp.push_back(tape.rows(out, 2 * static_cast<Eigen::Index>(k), 2));
  Var loss = plan.on_tape(tape, disp, in.lambda).total;
  tape.backward(loss);
  NetLoss r;
  r.loss = tape.value(loss)(0, 0);
  for (Var v : vars)
    r.grads.push_back(tape.has_grad(v) ? tape.grad(v) : Tensor::Zero(tape.value(v).rows(), tape.value(v).cols()));
  return r;
}

using TrainProgress = std::function<void(const EpochStats&)>;

inline TrainResult train(const std::vector<TrackWindow>& windows, const NetWeights& init, const TrainOptions& opts,
                         const TrainProgress& progress = {}) {
  init.validate();
  for (const auto& w : windows) {
    w.validate();
    if (w.length() != init.window) throw ShapeError("training window length does not match the network");
    if (static_cast<Eigen::Index>(w.point_count()) != init.points)
      throw ShapeError("training window point count does not match the network");
  }
  TrainResult result;
  result.weights = init;
  std::vector<Tensor> params = init.to_double();
  AdamState adam(opts.adam);
  Rng rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats st;
    st.epoch = epoch;
    std::size_t sample = 0;
    for (std::size_t idx : order) {
      TrackWindow w = opts.augment ? augment_window(windows[idx], rng, nullptr, opts.ranges) : windows[idx];
      if (opts.permute) w = permute_window(w, rng);
      double lambda = 0.0;
      while (!(lambda > 0.0)) lambda = unit(rng);
      WindowPlan plan(w, opts.objective);
      NetLoss nl = network_loss_and_grad(plan, lambda, init.layers, params, init.window);
      if (!std::isfinite(nl.loss))
        throw DivergenceError(sample, "training diverged at epoch " + std::to_string(epoch) + ", sample " +
                                          std::to_string(sample));
      st.mean_baseline += weighted_loss(plan, zero_displacements(w), effective_lambda(w, lambda));
      st.mean_loss += nl.loss;
      adam_step(adam, params, nl.grads);
      ++sample;
    }
    if (!windows.empty()) {
      st.mean_loss /= static_cast<double>(windows.size());
      st.mean_baseline /= static_cast<double>(windows.size());
    }
    result.curve.push_back(st);
    if (progress) progress(st);
  }
  result.weights.assign(params);
  return result;
}

inline void write_loss_curve(std::ostream& os, const std::vector<EpochStats>& curve) {
  os << "epoch,mean_loss,mean_baseline\n";
  for (const auto& e : curve) {
    std::ostringstream line;
    line.precision(10);
    line << e.epoch << ',' << e.mean_loss << ',' << e.mean_baseline << '\n';
    os << line.str();
  }
}

}  // namespace sstab
