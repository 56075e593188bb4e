#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sstab/objective.hpp"

using namespace sstab;

namespace {

PointSet random_points(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(0, kRefWidth), uy(0, kRefHeight);
  PointSet p(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(0, i) = ux(rng);
    p(1, i) = uy(rng);
  }
  return p;
}

PointSet jittered(const PointSet& p, std::mt19937_64& rng, double s) {
  std::normal_distribution<double> d(0, s);
  PointSet out = p;
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    out(0, i) += d(rng);
    out(1, i) += d(rng);
  }
  return out;
}

TrackWindow random_window(std::size_t t, Eigen::Index n, std::mt19937_64& rng, bool faces = true) {
  TrackWindow w;
  w.frames.resize(t);
  PointSet face = random_points(n, rng);
  for (std::size_t k = 0; k < t; ++k) {
    auto& f = w.frames[k];
    f.frame_index = k + 10;
    if (k + 1 < t) f.p = random_points(n, rng);
    if (k > 0) f.q = jittered(*w.frames[k - 1].p, rng, 4.0);
    if (faces) f.face = jittered(face, rng, 3.0);
  }
  return w;
}

WindowDisplacements random_disp(const TrackWindow& w, std::mt19937_64& rng, double s = 3.0) {
  WindowDisplacements d = zero_displacements(w);
  for (auto& x : d) x = jittered(x, rng, s);
  return d;
}

// Literal double-loop evaluation of the two loss terms.
double background_literal(const TrackWindow& w, const WindowDisplacements& d, double alpha) {
  const std::size_t t = w.length();
  auto qhat = [&](std::size_t k) -> PointSet { return k + 1 == t ? *w.frames[k].q : PointSet(*w.frames[k].q + d[k - 1]); };
  double sum = 0;
  for (std::size_t k = 0; k + 1 < t; ++k) {
    PointSet a = k == 0 ? *w.frames[0].p : oracle::warp_literal(*w.frames[k].p, *w.frames[k].q, qhat(k), alpha);
    sum += oracle::column_distance_sum(a, qhat(k + 1));
  }
  return sum;
}

double foreground_literal(const TrackWindow& w, const WindowDisplacements& d, double alpha) {
  const std::size_t t = w.length();
  auto warped = [&](std::size_t k) -> PointSet {
    if (k == 0 || k + 1 == t) return *w.frames[k].face;
    return oracle::warp_literal(*w.frames[k].face, *w.frames[k].q, *w.frames[k].q + d[k - 1], alpha);
  };
  double sum = 0;
  for (std::size_t k = 0; k + 1 < t; ++k)
    if (w.frames[k].face && w.frames[k + 1].face) sum += oracle::column_distance_sum(warped(k), warped(k + 1));
  return sum;
}

}  // namespace

TEST(Objective, StaticSceneZeroDisplacementIsZero) {
  SyntheticSceneSpec spec;
  spec.frame_count = 5;
  TrackWindow w = make_window(synthesize_scene(spec).stream.frames, 0, 5);
  WindowPlan plan(w);
  LossBreakdown l = plan.total_loss(zero_displacements(w), 0.3);
  EXPECT_EQ(l.background, 0.0);
  EXPECT_EQ(l.foreground, 0.0);
  EXPECT_EQ(l.total, 0.0);
}

TEST(Objective, DisplacementsCancellingTranslationGiveZero) {
  SyntheticSceneSpec spec;
  spec.frame_count = 4;
  spec.camera.scripted_translation = {{1.5, -2.0}, {7.0, 3.0}, {-4.0, 5.5}, {1.5, -2.0}};
  spec.face.scripted_translation = std::vector<Point2>(4, Point2{});
  SyntheticScene scene = synthesize_scene(spec);
  TrackWindow w = make_window(scene.stream.frames, 0, 4);
  WindowDisplacements d = zero_displacements(w);
  const Point2 anchor = scene.log[0].camera.shift;
  for (std::size_t k = 1; k <= 2; ++k) {
    const Point2 c = anchor - scene.log[k].camera.shift;
    d[k - 1].row(0).setConstant(c.x);
    d[k - 1].row(1).setConstant(c.y);
  }
  WindowPlan plan(w);
  EXPECT_GT(plan.background_loss(zero_displacements(w)), 100.0);
  EXPECT_LE(plan.background_loss(d), 1e-9);
  EXPECT_LE(plan.foreground_loss(d), 1e-9);
}

TEST(Objective, MatchesLiteralTranscription) {
  std::mt19937_64 rng(21);
  for (std::size_t t : {3u, 5u}) {
    TrackWindow w = random_window(t, 64, rng);
    WindowDisplacements d = random_disp(w, rng);
    WindowPlan plan(w);
    const double lb = background_literal(w, d, 0.3), lf = foreground_literal(w, d, 0.3);
    EXPECT_NEAR(plan.background_loss(d), lb, 1e-9 * lb);
    EXPECT_NEAR(plan.foreground_loss(d), lf, 1e-9 * lf);
  }
}

TEST(Objective, FullSizeWindowMatchesLiteralTranscription) {
  std::mt19937_64 rng(22);
  TrackWindow w = random_window(5, 512, rng);
  WindowDisplacements d = random_disp(w, rng);
  WindowPlan plan(w);
  const double lb = background_literal(w, d, 0.3);
  EXPECT_NEAR(plan.background_loss(d), lb, 1e-9 * lb);
}

TEST(Objective, ConstantFaceAndMissingFaces) {
  std::mt19937_64 rng(23);
  TrackWindow w = random_window(5, 32, rng);
  for (auto& f : w.frames) f.face = *w.frames[0].face;
  EXPECT_DOUBLE_EQ(WindowPlan(w).foreground_loss(zero_displacements(w)), 0.0);
  for (auto& f : w.frames) f.face.reset();
  WindowPlan plan(w);
  EXPECT_FALSE(plan.any_face_term());
  EXPECT_DOUBLE_EQ(plan.foreground_loss(random_disp(w, rng)), 0.0);
}

TEST(Objective, TotalIsAffineCombination) {
  EXPECT_DOUBLE_EQ(combine(4.0, 2.0, 0.5).total, 3.0);
  std::mt19937_64 rng(24);
  TrackWindow w = random_window(5, 32, rng);
  WindowDisplacements d = random_disp(w, rng);
  WindowPlan plan(w);
  const LossBreakdown small = plan.total_loss(d, 1e-6);
  EXPECT_NEAR(small.total, small.background, 1e-5 * small.background);
  EXPECT_THROW((void)plan.total_loss(d, 0.0), ParameterError);
  EXPECT_THROW((void)plan.total_loss(d, 1.0), ParameterError);
  // dL/dlambda = L_f - L_b exactly (affine in lambda).
  const LossBreakdown a = plan.total_loss(d, 0.25), b = plan.total_loss(d, 0.75);
  EXPECT_NEAR((b.total - a.total) / 0.5, a.foreground - a.background, 1e-9 * (a.foreground + a.background));
  EXPECT_GE(a.background, 0.0);
  EXPECT_GE(a.foreground, 0.0);
}

TEST(Objective, ScaleEquivariance) {
  std::mt19937_64 rng(25);
  TrackWindow w = random_window(5, 48, rng);
  WindowDisplacements d = random_disp(w, rng);
  const LossBreakdown base = WindowPlan(w).total_loss(d, 0.3);
  for (double s : {0.5, 2.0, 10.0}) {
    TrackWindow ws = w;
    for (auto& f : ws.frames) {
      if (f.p) *f.p *= s;
      if (f.q) *f.q *= s;
      if (f.face) *f.face *= s;
    }
    WindowDisplacements ds = d;
    for (auto& x : ds) x *= s;
    const LossBreakdown l = WindowPlan(ws).total_loss(ds, 0.3);
    EXPECT_NEAR(l.background, s * base.background, 1e-6 * s * base.background);
    EXPECT_NEAR(l.foreground, s * base.foreground, 1e-6 * s * base.foreground);
    EXPECT_NEAR(l.total, s * base.total, 1e-6 * s * base.total);
  }
}

TEST(Objective, FrobeniusNormOption) {
  std::mt19937_64 rng(26);
  TrackWindow w = random_window(3, 16, rng);
  WindowDisplacements d = random_disp(w, rng);
  WindowPlan plan(w, {MlsConfig{}, LossNorm::frobenius});
  PointSet r0 = *w.frames[0].p - (*w.frames[1].q + d[0]);
  PointSet r1 = oracle::warp_literal(*w.frames[1].p, *w.frames[1].q, *w.frames[1].q + d[0], 0.3) - *w.frames[2].q;
  const double want = std::sqrt(r0.array().square().sum()) + std::sqrt(r1.array().square().sum());
  EXPECT_NEAR(plan.background_loss(d), want, 1e-9 * want);
}

TEST(Objective, ShapeErrors) {
  std::mt19937_64 rng(27);
  TrackWindow w = random_window(5, 16, rng);
  WindowPlan plan(w);
  WindowDisplacements d = zero_displacements(w);
  d.pop_back();
  EXPECT_THROW((void)plan.background_loss(d), ShapeError);
}

TEST(Objective, TapeLossMatchesDirectEvaluation) {
  std::mt19937_64 rng(28);
  TrackWindow w = random_window(5, 32, rng);
  WindowDisplacements d = random_disp(w, rng);
  WindowPlan plan(w);
  Tape tape;
  std::vector<Var> vars;
  for (auto& x : d) vars.push_back(tape.parameter(x));
  auto l = plan.on_tape(tape, vars, 0.3);
  const LossBreakdown ref = plan.total_loss(d, 0.3);
  EXPECT_NEAR(tape.value(l.total)(0, 0), ref.total, 1e-9 * ref.total);
  EXPECT_NEAR(tape.value(l.background)(0, 0), ref.background, 1e-9 * ref.background);
  EXPECT_NEAR(tape.value(l.foreground)(0, 0), ref.foreground, 1e-9 * ref.foreground);
}

TEST(Objective, TapeGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(29);
  TrackWindow w = random_window(3, 8, rng);
  WindowDisplacements d = random_disp(w, rng);
  for (LossNorm norm : {LossNorm::per_point, LossNorm::frobenius}) {
    WindowPlan plan(w, {MlsConfig{}, norm});
    auto vg = value_and_grad(
        [&](Tape& t, const std::vector<Var>& v) { return plan.on_tape(t, v, 0.3).total; }, d);
    const double h = 1e-4;
    for (std::size_t s = 0; s < d.size(); ++s)
      for (Eigen::Index i = 0; i < d[s].size(); ++i) {
        WindowDisplacements dp = d, dm = d;
        dp[s].data()[i] += h;
        dm[s].data()[i] -= h;
        const double fd = (plan.total_loss(dp, 0.3).total - plan.total_loss(dm, 0.3).total) / (2 * h);
        const double g = vg.grads[s].data()[i];
        if (std::abs(g) > 1e-6) {
          EXPECT_LE(std::abs(fd - g) / std::abs(g), 1e-4) << s << ":" << i;
        }
      }
  }
}
