#pragma once

#include <optional>
#include <vector>

#include "sstab/autodiff.hpp"
#include "sstab/mls.hpp"
#include "sstab/tracks.hpp"

namespace sstab {

// Displacements Q̂_t - Q_t for the interior frames 2..T-1 (T-2 entries, 2 x N each).
using WindowDisplacements = std::vector<PointSet>;

enum class LossNorm { per_point, frobenius };

struct ObjectiveConfig {
  MlsConfig mls;
  LossNorm norm = LossNorm::per_point;
};

struct LossBreakdown {
  double background = 0.0;
  double foreground = 0.0;
  double total = 0.0;
};

inline void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ParameterError("lambda must lie in (0,1), got " + std::to_string(lambda));
}

inline LossBreakdown combine(double lb, double lf, double lambda) {
  return {lb, lf, (1.0 - lambda) * lb + lambda * lf};
}

inline WindowDisplacements zero_displacements(const TrackWindow& w) {
  const auto n = static_cast<Eigen::Index>(w.point_count());
  return WindowDisplacements(w.length() - 2, PointSet::Zero(2, n));
}

// Precomputed warp plans for one window. The first and last frames use the
// identity warp; interior frames warp P_t and F_t with nodes (Q_t, Q̂_t).
class WindowPlan {
 public:
  WindowPlan(const TrackWindow& window, ObjectiveConfig cfg = {}) : window_(window), cfg_(cfg) {
    window_.validate();
    const std::size_t t = window_.length();
    p_plans_.resize(t);
    f_plans_.resize(t);
    for (std::size_t k = 1; k + 1 < t; ++k) {
      const auto& f = window_.frames[k];
      try {
        p_plans_[k].emplace(*f.p, *f.q, cfg_.mls);
        if (f.face) f_plans_[k].emplace(*f.face, *f.q, cfg_.mls);
      } catch (const Error& e) {
        throw DataError("frame " + std::to_string(f.frame_index) + ": " + e.what());
      }
    }
  }

  const TrackWindow& window() const { return window_; }
  const ObjectiveConfig& config() const { return cfg_; }
  std::size_t length() const { return window_.length(); }
  Eigen::Index point_count() const { return static_cast<Eigen::Index>(window_.point_count()); }
  bool face_term_active(std::size_t k) const { return window_.frames[k].face && window_.frames[k + 1].face; }
  bool any_face_term() const {
    for (std::size_t k = 0; k + 1 < length(); ++k)
      if (face_term_active(k)) return true;
    return false;
  }

  void check(const WindowDisplacements& disp) const {
    if (disp.size() != length() - 2)
      throw ShapeError("expected " + std::to_string(length() - 2) + " displacement sets, got " +
                       std::to_string(disp.size()));
    for (const auto& d : disp)
      if (d.rows() != 2 || d.cols() != point_count()) throw ShapeError("displacement set must be 2 x N");
  }

  PointSet targets(std::size_t k, const WindowDisplacements& disp) const {
    if (k == 0) throw ContractError("frame 1 has no warp nodes");
    if (k + 1 == length()) return *window_.frames[k].q;
    return *window_.frames[k].q + disp[k - 1];
  }

  PointSet warped_points(std::size_t k, const WindowDisplacements& disp) const {
    if (k == 0 || k + 1 == length()) return *window_.frames[k].p;
    return apply(*p_plans_[k], targets(k, disp), k);
  }

  PointSet warped_face(std::size_t k, const WindowDisplacements& disp) const {
    if (k == 0 || k + 1 == length()) return *window_.frames[k].face;
    return apply(*f_plans_[k], targets(k, disp), k);
  }

  double reduce(const PointSet& residual) const {
    if (cfg_.norm == LossNorm::frobenius) return residual.norm();
    return residual.colwise().norm().sum();
  }

  double background_loss(const WindowDisplacements& disp) const {
    check(disp);
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < length(); ++k) sum += reduce(warped_points(k, disp) - targets(k + 1, disp));
    return sum;
  }

  double foreground_loss(const WindowDisplacements& disp) const {
    check(disp);
    double sum = 0.0;
    std::optional<PointSet> prev;
    for (std::size_t k = 0; k + 1 < length(); ++k) {
      if (!face_term_active(k)) {
        prev.reset();
        continue;
      }
      PointSet a = prev ? std::move(*prev) : warped_face(k, disp);
      PointSet b = warped_face(k + 1, disp);
      sum += reduce(a - b);
      prev = std::move(b);
    }
    return sum;
  }

  LossBreakdown total_loss(const WindowDisplacements& disp, double lambda) const {
    check_lambda(lambda);
    return combine(background_loss(disp), foreground_loss(disp), lambda);
  }

  // Builds L on a tape. `disp` holds T-2 variables of shape 2 x N. Returns
  // (total, background, foreground) variables.
  struct TapeLoss {
    Var total, background, foreground;
  };

  // lambda may be 0 here (background-only windows).
  TapeLoss on_tape(Tape& tape, const std::vector<Var>& disp, double lambda) const {
    if (!(lambda >= 0.0 && lambda < 1.0)) throw ParameterError("lambda must lie in [0,1)");
    if (disp.size() != length() - 2) throw ShapeError("displacement variable count mismatch");
    const std::size_t t = length();
    std::vector<Var> node(t), warp_p(t);
    std::vector<std::optional<Var>> warp_f(t);
    for (std::size_t k = 0; k < t; ++k) {
      const auto& f = window_.frames[k];
      if (k == 0 || k + 1 == t) {
        if (k > 0) node[k] = tape.constant(*f.q);
        if (f.p) warp_p[k] = tape.constant(*f.p);
        if (f.face) warp_f[k] = tape.constant(*f.face);
        continue;
      }
      node[k] = tape.add(tape.constant(*f.q), disp[k - 1]);
      warp_p[k] = tape.mls_warp(*p_plans_[k], node[k]);
      if (f.face) warp_f[k] = tape.mls_warp(*f_plans_[k], node[k]);
    }
    auto term = [&](Var residual) {
      return cfg_.norm == LossNorm::frobenius ? tape.frobenius(residual) : tape.sum(tape.column_norms(residual));
    };
    std::optional<Var> lb, lf;
    for (std::size_t k = 0; k + 1 < t; ++k) {
      Var b = term(tape.sub(warp_p[k], node[k + 1]));
      lb = lb ? tape.add(*lb, b) : b;
      if (face_term_active(k)) {
        Var f = term(tape.sub(*warp_f[k], *warp_f[k + 1]));
        lf = lf ? tape.add(*lf, f) : f;
      }
    }
    if (!lf) lf = tape.constant(Tensor::Zero(1, 1));
    Var total = tape.add(tape.scale(*lb, 1.0 - lambda), tape.scale(*lf, lambda));
    return {total, *lb, *lf};
  }

 private:
  PointSet apply(const MlsPlan& plan, const PointSet& targets, std::size_t k) const {
    try {
      return plan.apply(targets);
    } catch (const DegenerateWarpError& e) {
      throw DegenerateWarpError(e.index(),
                                "frame " + std::to_string(window_.frames[k].frame_index) + ": " + e.what());
    }
  }

  TrackWindow window_;
  ObjectiveConfig cfg_;
  std::vector<std::optional<MlsPlan>> p_plans_;
  std::vector<std::optional<MlsPlan>> f_plans_;
};

inline double background_loss(const TrackWindow& w, const WindowDisplacements& d, const ObjectiveConfig& cfg = {}) {
  return WindowPlan(w, cfg).background_loss(d);
}

inline double foreground_loss(const TrackWindow& w, const WindowDisplacements& d, const ObjectiveConfig& cfg = {}) {
  return WindowPlan(w, cfg).foreground_loss(d);
}

inline LossBreakdown total_loss(const TrackWindow& w, const WindowDisplacements& d, double lambda,
                                const ObjectiveConfig& cfg = {}) {
  return WindowPlan(w, cfg).total_loss(d, lambda);
}

}  // namespace sstab
