#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "sstab/metrics.hpp"

using namespace sstab;

namespace {

std::vector<FrameTracks> scene_frames(const SyntheticSceneSpec& spec) { return synthesize_scene(spec).stream.frames; }

// Plain DFT band energies (bins 2..6, bins 2..N/2) of a detrended series,
// written out with separate cosine and sine sums.
std::pair<double, double> band_oracle(const std::vector<double>& s) {
  const double n = static_cast<double>(s.size());
  double a = 0, b = 0, c = 0, d = 0, e = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = static_cast<double>(i);
    a += 1;
    b += t;
    c += t * t;
    d += s[i];
    e += t * s[i];
  }
  const double slope = (a * e - b * d) / (a * c - b * b);
  const double icpt = (d - slope * b) / a;
  double low = 0, total = 0;
  for (std::size_t k = 2; k <= s.size() / 2; ++k) {
    double re = 0, im = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double r = s[i] - icpt - slope * static_cast<double>(i);
      re += r * std::cos(2 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(i) / n);
      im -= r * std::sin(2 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(i) / n);
    }
    total += re * re + im * im;
    if (k <= 6) low += re * re + im * im;
  }
  return {low, total};
}

double stability_oracle(const std::vector<double>& s) {
  const auto [low, total] = band_oracle(s);
  return low / total;
}

std::vector<double> moving_average(const std::vector<double>& s, int taps) {
  std::vector<double> out(s.size());
  const int h = taps / 2, n = static_cast<int>(s.size());
  for (int i = 0; i < n; ++i) {
    double sum = 0;
    int cnt = 0;
    for (int j = std::max(0, i - h); j <= std::min(n - 1, i + h); ++j, ++cnt) sum += s[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = sum / cnt;
  }
  return out;
}

std::vector<double> white_noise(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

NodePair mapped(const PointSet& q, const Eigen::Matrix2d& l, Point2 t = {}) {
  PointSet qh = l * q;
  qh.row(0).array() += t.x;
  qh.row(1).array() += t.y;
  return {q, qh};
}

}  // namespace

TEST(CameraPath, StaticSceneIsZero) {
  SyntheticSceneSpec spec;
  spec.frame_count = 12;
  const auto path = camera_path(scene_frames(spec));
  ASSERT_EQ(path.size(), 12u);
  for (std::size_t k = 0; k < path.size(); ++k) {
    EXPECT_NEAR(path.x[k], 0.0, 1e-9);
    EXPECT_NEAR(path.y[k], 0.0, 1e-9);
  }
}

TEST(CameraPath, UniformTranslationAccumulates) {
  SyntheticSceneSpec spec;
  spec.frame_count = 15;
  spec.camera.drift = {1.5, -0.75};
  const auto path = camera_path(scene_frames(spec));
  for (std::size_t k = 0; k < path.size(); ++k) {
    EXPECT_NEAR(path.x[k], 1.5 * static_cast<double>(k), 1e-9);
    EXPECT_NEAR(path.y[k], -0.75 * static_cast<double>(k), 1e-9);
  }
}

TEST(CameraPath, MatchesLoggedSimilarityJitter) {
  SyntheticSceneSpec spec;
  spec.frame_count = 30;
  spec.camera.translation_std = 6.0;
  spec.camera.rotation_std_deg = 1.0;
  spec.seed = 21;
  const SyntheticScene scene = synthesize_scene(spec);
  const auto path = camera_path(scene.stream.frames);
  const Eigen::Vector2d mean = scene.stream.frames[0].points_p.rowwise().mean();
  const Eigen::Vector3d c(mean.x(), mean.y(), 1.0);
  const Eigen::Matrix3d first_inv = scene.log[0].camera.matrix().inverse();
  for (std::size_t k = 0; k < path.size(); ++k) {
    const Eigen::Vector3d want = scene.log[k].camera.matrix() * first_inv * c - c;
    EXPECT_NEAR(path.x[k], want.x(), 1e-6) << k;
    EXPECT_NEAR(path.y[k], want.y(), 1e-6) << k;
  }
}

TEST(CameraPath, TooFewFramesOrDegenerateFit) {
  SyntheticSceneSpec spec;
  spec.frame_count = 1;
  EXPECT_THROW(camera_path(scene_frames(spec)), MetricError);
  spec.frame_count = 3;
  auto frames = scene_frames(spec);
  frames[0].points_p = PointSet::Zero(2, 512);
  EXPECT_THROW(camera_path(frames), FitError);
}

TEST(Stability, ConstantVelocityIsOne) {
  std::vector<double> x(40), y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x[i] = 2.5 * static_cast<double>(i);
    y[i] = -1.0 * static_cast<double>(i) + 3.0;
  }
  EXPECT_DOUBLE_EQ(stability(x, y), 1.0);
}

TEST(Stability, MatchesDirectTransform) {
  const auto x = white_noise(3, 64), y = white_noise(4, 64);
  const auto ex = band_oracle(x), ey = band_oracle(y);
  EXPECT_NEAR(stability(x, y), (ex.first + ey.first) / (ex.second + ey.second), 1e-12);
}

TEST(Stability, SmoothingIncreasesStability) {
  const auto noise = white_noise(11, 120);
  const auto smooth = moving_average(noise, 31);
  const double raw = stability_oracle(noise), sm = stability_oracle(smooth);
  EXPECT_GT(sm, raw);
  EXPECT_NEAR(stability(noise, noise), raw, 1e-12);
  EXPECT_NEAR(stability(smooth, smooth), sm, 1e-12);
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto n = white_noise(seed, 120);
    const auto s = moving_average(n, 31);
    EXPECT_GE(stability(s, s), stability(n, n)) << seed;
  }
}

TEST(Stability, RangeAndErrors) {
  const auto n = white_noise(5, 50);
  const double s = stability(n, n);
  EXPECT_GT(s, 0.0);
  EXPECT_LE(s, 1.0);
  EXPECT_THROW(stability(std::vector<double>(11), std::vector<double>(11)), MetricError);
  EXPECT_THROW(stability(std::vector<double>(20), std::vector<double>(21)), MetricError);
}

TEST(CropDistortion, IdentityIsPerfect) {
  SyntheticSceneSpec spec;
  spec.frame_count = 4;
  std::vector<NodePair> nodes;
  for (const auto& f : scene_frames(spec)) nodes.push_back(NodePair::identity(f.points_p));
  const auto cd = cropping_distortion(nodes);
  EXPECT_NEAR(cd.cropping, 1.0, 1e-12);
  EXPECT_NEAR(cd.distortion, 1.0, 1e-12);
}

TEST(CropDistortion, IsotropicShrink) {
  SyntheticSceneSpec spec;
  spec.frame_count = 5;
  std::vector<NodePair> nodes;
  for (const auto& f : scene_frames(spec)) nodes.push_back(mapped(f.points_p, 0.9 * Eigen::Matrix2d::Identity(), {40, 22}));
  const auto cd = cropping_distortion(nodes);
  EXPECT_NEAR(cd.cropping, 0.9, 1e-9);
  EXPECT_NEAR(cd.distortion, 1.0, 1e-9);
}

TEST(CropDistortion, AnisotropicFrame) {
  SyntheticSceneSpec spec;
  spec.frame_count = 5;
  std::vector<NodePair> nodes;
  for (const auto& f : scene_frames(spec)) nodes.push_back(NodePair::identity(f.points_p));
  nodes[2] = mapped(nodes[2].source, Eigen::Vector2d(1.0, 0.8).asDiagonal());
  const auto cd = cropping_distortion(nodes);
  EXPECT_NEAR(cd.distortion, 0.8, 1e-9);
  EXPECT_NEAR(cd.frames[2].crop, std::sqrt(0.8), 1e-9);
}

TEST(CropDistortion, EmptyPairsAndFailures) {
  SyntheticSceneSpec spec;
  spec.frame_count = 3;
  const auto frames = scene_frames(spec);
  std::vector<NodePair> nodes = {NodePair{}, NodePair::identity(frames[1].points_p),
                                 NodePair{PointSet::Zero(2, 512), PointSet::Zero(2, 512)}};
  std::ostringstream warn;
  const auto cd = cropping_distortion(nodes, {1, 2, 3}, &warn);
  EXPECT_NEAR(cd.cropping, 1.0, 1e-12);
  EXPECT_FALSE(cd.frames[2].fitted);
  EXPECT_NE(warn.str().find("frame 3"), std::string::npos);
  std::vector<NodePair> bad = {nodes[2], nodes[2]};
  EXPECT_THROW(cropping_distortion(bad, {}, &warn), MetricError);
}

TEST(Metrics, RigidStabilizationDoesNotDistort) {
  SyntheticSceneSpec spec;
  spec.frame_count = 4;
  std::vector<NodePair> nodes;
  for (const auto& f : scene_frames(spec)) {
    const RigidMotion m{deg_to_rad(3.0), {5.0, -7.0}, {100, 50}};
    nodes.push_back({f.points_p, m.apply(f.points_p)});
  }
  const auto cd = cropping_distortion(nodes);
  EXPECT_GE(cd.distortion, 1.0 - 1e-6);
  EXPECT_NEAR(cd.cropping, 1.0, 1e-6);
}

TEST(Metrics, InvariantToGlobalRigidTransform) {
  SyntheticSceneSpec spec;
  spec.frame_count = 16;
  spec.camera.translation_std = 4.0;
  spec.camera.rotation_std_deg = 0.5;
  spec.seed = 8;
  auto frames = scene_frames(spec);
  std::vector<NodePair> nodes(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Eigen::Matrix2d l = Eigen::Vector2d(1.0, 0.9 + 0.005 * static_cast<double>(k)).asDiagonal();
    nodes[k] = mapped(frames[k].points_p, l, {3.0, 1.0});
  }
  // A rigid motion applied to the whole stream; the node sources must stay
  // tied to the tracks, so they are moved the same way.
  const RigidMotion g{deg_to_rad(20.0), {30.0, -12.0}, {kRefWidth / 2, kRefHeight / 2}};
  auto moved = frames;
  std::vector<NodePair> moved_nodes(nodes.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    moved[k].points_p = g.apply(frames[k].points_p);
    if (frames[k].nodes_q_next) moved[k].nodes_q_next = g.apply(*frames[k].nodes_q_next);
    if (frames[k].face) moved[k].face = g.apply(*frames[k].face);
    moved_nodes[k] = {g.apply(nodes[k].source), g.apply(nodes[k].target)};
  }
  const auto a = cropping_distortion(nodes), b = cropping_distortion(moved_nodes);
  EXPECT_NEAR(a.cropping, b.cropping, 1e-9);
  EXPECT_NEAR(a.distortion, b.distortion, 1e-9);
  const auto pa = camera_path(frames), pb = camera_path(moved);
  const double sa = stability(pa), sb = stability(pb);
  EXPECT_NEAR(sa, sb, 1e-6);
}

TEST(Metrics, ReportAndCsv) {
  SyntheticSceneSpec spec;
  spec.frame_count = 14;
  spec.camera.translation_std = 3.0;
  const auto frames = scene_frames(spec);
  std::vector<NodePair> nodes(frames.size());
  const auto m = evaluate_metrics(frames, nodes);
  EXPECT_DOUBLE_EQ(m.cropping, 1.0);
  EXPECT_DOUBLE_EQ(m.distortion, 1.0);
  EXPECT_DOUBLE_EQ(m.stability, m.stability_input);
  std::ostringstream os;
  write_metrics_csv(os, m);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "frame,crop,distort,path_x,path_y");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("summary,", 0) == 0) break;
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
  }
  EXPECT_EQ(rows, 14u);
  EXPECT_EQ(line.rfind("summary,1,1,", 0), 0u) << line;
}

TEST(Metrics, StabilizedTracksFollowNodes) {
  SyntheticSceneSpec spec;
  spec.frame_count = 3;
  const auto frames = scene_frames(spec);
  std::vector<NodePair> nodes(3);
  nodes[1] = {*frames[0].nodes_q_next, *frames[0].nodes_q_next};
  nodes[1].target.row(0).array() += 2.0;
  const auto out = stabilized_tracks(frames, nodes);
  EXPECT_NEAR((out[1].points_p - frames[1].points_p).row(0).mean(), 2.0, 1e-9);
  EXPECT_NEAR((*out[0].nodes_q_next - *frames[0].nodes_q_next).row(0).mean(), 2.0, 1e-12);
  std::vector<NodePair> wrong = nodes;
  wrong[1].source.array() += 1.0;
  EXPECT_THROW(stabilized_tracks(frames, wrong), MetricError);
}

TEST(ResidualMotion, MeasuresPerPointMotion) {
  SyntheticSceneSpec spec;
  spec.frame_count = 6;
  spec.camera.drift = {3.0, 4.0};
  const auto r = residual_motion(scene_frames(spec));
  EXPECT_NEAR(r.background, 5.0, 1e-9);
  EXPECT_NEAR(r.face, 5.0, 1e-9);
}
