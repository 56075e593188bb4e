#pragma once

#include <cmath>
#include <complex>
#include <iostream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "sstab/error.hpp"
#include "sstab/geometry.hpp"
#include "sstab/mls.hpp"
#include "sstab/tracks.hpp"

namespace sstab {

struct CameraPath {
  std::vector<double> x;
  std::vector<double> y;
  std::size_t size() const { return x.size(); }
};

// Cumulative motion of a reference point, composing per-pair similarity fits
// of (P_t, Q_{t+1}). The reference is the centroid of the first frame's
// points, so the path moves with the content. Entry 0 is the origin.
inline CameraPath camera_path(std::span<const FrameTracks> frames) {
  if (frames.size() < 2) throw MetricError("camera path needs at least 2 frames");
  CameraPath path;
  Eigen::Matrix3d total = Eigen::Matrix3d::Identity();
  const Eigen::Vector2d mean = frames[0].points_p.rowwise().mean();
  const Eigen::Vector3d c(mean.x(), mean.y(), 1.0);
  path.x.push_back(0.0);
  path.y.push_back(0.0);
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    if (!frames[k].nodes_q_next) throw MetricError("frame " + std::to_string(frames[k].frame_index) + " has no Qnext");
    Eigen::Matrix3d m;
    try {
      m = fit_similarity(frames[k].points_p, *frames[k].nodes_q_next);
    } catch (const FitError& e) {
      throw FitError("frame " + std::to_string(frames[k].frame_index) + ": " + e.what());
    }
    total = m * total;
    const Eigen::Vector3d moved = total * c;
    path.x.push_back(moved.x() - c.x());
    path.y.push_back(moved.y() - c.y());
  }
  return path;
}

namespace detail {

struct BandEnergy {
  double low = 0.0;
  double total = 0.0;
  double scale = 0.0;
};

// Energy in bins 2..6 and in bins 2..N/2 after removing a linear trend.
inline BandEnergy axis_energy(const std::vector<double>& s) {
  const std::size_t n = s.size();
  double mt = 0.0, ms = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mt += static_cast<double>(i);
    ms += s[i];
  }
  mt /= static_cast<double>(n);
  ms /= static_cast<double>(n);
  double stt = 0.0, sts = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - mt;
    stt += dt * dt;
    sts += dt * (s[i] - ms);
    scale += s[i] * s[i];
  }
  const double slope = sts / stt;
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = s[i] - ms - slope * (static_cast<double>(i) - mt);
  double low = 0.0, total = 0.0;
  for (std::size_t k = 2; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n);
      acc += r[i] * std::complex<double>(std::cos(a), std::sin(a));
    }
    const double e = std::norm(acc);
    total += e;
    if (k <= 6) low += e;
  }
  return {low, total, scale * static_cast<double>(n)};
}

}  // namespace detail

inline double stability(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw MetricError("path axes differ in length");
  if (x.size() < 12) throw MetricError("stability needs a path of at least 12 frames");
  // Both axes are pooled so a rotation of the whole stream leaves the value unchanged.
  const auto ex = detail::axis_energy(x), ey = detail::axis_energy(y);
  const double total = ex.total + ey.total;
  if (total <= 1e-20 * std::max(1.0, ex.scale + ey.scale)) return 1.0;
  return (ex.low + ey.low) / total;
}

inline double stability(const CameraPath& p) { return stability(p.x, p.y); }

struct FrameQuality {
  std::size_t frame_index = 0;
  double crop = 1.0;
  double distort = 1.0;
  bool fitted = true;
};

struct CropDistortion {
  double cropping = 1.0;
  double distortion = 1.0;
  std::vector<FrameQuality> frames;
};

// Per frame affine fit Q -> Q̂. Empty node pairs count as identity.
inline CropDistortion cropping_distortion(const std::vector<NodePair>& nodes,
                                          const std::vector<std::size_t>& frame_index = {},
                                          std::ostream* warn = &std::cerr) {
  CropDistortion out;
  double crop_sum = 0.0;
  std::size_t used = 0;
  out.distortion = 1.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    FrameQuality q;
    q.frame_index = k < frame_index.size() ? frame_index[k] : k + 1;
    if (!nodes[k].empty()) {
      try {
        const auto a = fit_affine(nodes[k].source, nodes[k].target);
        const Eigen::Matrix2d l = a.leftCols<2>();
        Eigen::JacobiSVD<Eigen::Matrix2d> svd(l);
        const auto sv = svd.singularValues();
        q.crop = std::min(1.0, std::sqrt(std::abs(l.determinant())));
        q.distort = sv(0) > 0.0 ? sv(1) / sv(0) : 0.0;
      } catch (const FitError& e) {
        q.fitted = false;
        if (warn) *warn << "warning: frame " << q.frame_index << " skipped: " << e.what() << '\n';
      }
    }
    if (q.fitted) {
      crop_sum += q.crop;
      out.distortion = std::min(out.distortion, q.distort);
      ++used;
    }
    out.frames.push_back(q);
  }
  if (used == 0) throw MetricError("no frame could be fitted");
  out.cropping = crop_sum / static_cast<double>(used);
  return out;
}

// Output tracks expressed in stabilized coordinates: P_t and F_t warped by
// frame t's nodes, Q_{t+1} replaced by frame t+1's targets.
inline std::vector<FrameTracks> stabilized_tracks(std::span<const FrameTracks> input, const std::vector<NodePair>& nodes,
                                                  const MlsConfig& cfg = {}) {
  if (nodes.size() != input.size()) throw MetricError("node pairs and frames differ in count");
  std::vector<FrameTracks> out(input.begin(), input.end());
  for (std::size_t k = 0; k < input.size(); ++k) {
    if (nodes[k].empty()) continue;
    out[k].points_p = mls_warp_points(input[k].points_p, nodes[k], cfg);
    if (input[k].face) out[k].face = mls_warp_points(*input[k].face, nodes[k], cfg);
  }
  for (std::size_t k = 0; k + 1 < input.size(); ++k)
    if (input[k].nodes_q_next && !nodes[k + 1].empty()) {
      const PointSet& q = *input[k].nodes_q_next;
      if (nodes[k + 1].source.cols() != q.cols() || (nodes[k + 1].source - q).cwiseAbs().maxCoeff() > 1e-6)
        throw MetricError("frame " + std::to_string(input[k + 1].frame_index) + ": nodes do not match tracks");
      out[k].nodes_q_next = nodes[k + 1].target;
    }
  return out;
}

// Mean per-point frame-to-frame motion of background correspondences and of
// face vertices.
struct ResidualMotion {
  double background = 0.0;
  double face = 0.0;
};

inline ResidualMotion residual_motion(std::span<const FrameTracks> frames) {
  ResidualMotion r;
  std::size_t nb = 0, nf = 0;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    if (frames[k].nodes_q_next) {
      r.background += (frames[k].points_p - *frames[k].nodes_q_next).colwise().norm().sum();
      nb += static_cast<std::size_t>(frames[k].points_p.cols());
    }
    if (frames[k].face && frames[k + 1].face) {
      r.face += (*frames[k].face - *frames[k + 1].face).colwise().norm().sum();
      nf += static_cast<std::size_t>(frames[k].face->cols());
    }
  }
  if (nb) r.background /= static_cast<double>(nb);
  if (nf) r.face /= static_cast<double>(nf);
  return r;
}

struct MetricReport {
  double cropping = 1.0;
  double distortion = 1.0;
  double stability = 1.0;        // output path
  double stability_input = 1.0;  // input path
  CameraPath path;
  CropDistortion per_frame;
};

inline MetricReport evaluate_metrics(std::span<const FrameTracks> input, const std::vector<NodePair>& nodes,
                                     const MlsConfig& cfg = {}, std::ostream* warn = &std::cerr) {
  MetricReport m;
  std::vector<std::size_t> idx;
  for (const auto& f : input) idx.push_back(f.frame_index);
  m.per_frame = cropping_distortion(nodes, idx, warn);
  m.cropping = m.per_frame.cropping;
  m.distortion = m.per_frame.distortion;
  const auto out = stabilized_tracks(input, nodes, cfg);
  m.path = camera_path(out);
  m.stability = stability(m.path);
  m.stability_input = stability(camera_path(input));
  return m;
}

inline void write_metrics_csv(std::ostream& os, const MetricReport& m) {
  std::ostringstream s;
  s.precision(10);
  s << "frame,crop,distort,path_x,path_y\n";
  for (std::size_t k = 0; k < m.per_frame.frames.size(); ++k) {
    const auto& f = m.per_frame.frames[k];
    s << f.frame_index << ',' << f.crop << ',' << f.distort << ',' << m.path.x[k] << ',' << m.path.y[k] << '\n';
  }
  s << "summary," << m.cropping << ',' << m.distortion << ',' << m.stability << ',' << m.stability_input << '\n';
  os << s.str();
}

}  // namespace sstab
