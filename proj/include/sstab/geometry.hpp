#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

#include "sstab/error.hpp"

namespace sstab {

// Dense row-major matrix used for point sets (2 x N, row 0 = x, row 1 = y)
// and for network activations (channels x length).
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PointSet = Tensor;

// Reference processing resolution. Every solver works in these pixels.
inline constexpr double kRefWidth = 832.0;
inline constexpr double kRefHeight = 448.0;
inline constexpr std::size_t kDefaultPointCount = 512;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point2 a, Point2 b) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }

inline Point2 point_at(const PointSet& s, Eigen::Index i) { return {s(0, i), s(1, i)}; }
inline void set_point(PointSet& s, Eigen::Index i, Point2 p) {
  s(0, i) = p.x;
  s(1, i) = p.y;
}

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

// x -> R(angle) (x - pivot) + pivot + shift
struct RigidMotion {
  double angle_rad = 0.0;
  Point2 shift{};
  Point2 pivot{};

  Point2 apply(Point2 p) const {
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    const double dx = p.x - pivot.x, dy = p.y - pivot.y;
    return {c * dx - s * dy + pivot.x + shift.x, s * dx + c * dy + pivot.y + shift.y};
  }

  PointSet apply(const PointSet& pts) const {
    PointSet out(2, pts.cols());
    for (Eigen::Index i = 0; i < pts.cols(); ++i) set_point(out, i, apply(point_at(pts, i)));
    return out;
  }

  Eigen::Matrix3d matrix() const {
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = c;
    m(0, 1) = -s;
    m(1, 0) = s;
    m(1, 1) = c;
    m(0, 2) = pivot.x + shift.x - (c * pivot.x - s * pivot.y);
    m(1, 2) = pivot.y + shift.y - (s * pivot.x + c * pivot.y);
    return m;
  }
};

// Least-squares similarity src -> dst as a homogeneous 3x3 matrix.
inline Eigen::Matrix3d fit_similarity(const PointSet& src, const PointSet& dst) {
  if (src.cols() != dst.cols() || src.rows() != 2 || dst.rows() != 2)
    throw FitError("similarity fit: mismatched point sets");
  // Distinct source points; fewer than 3 cannot pin rotation and scale robustly.
  Eigen::Index distinct = 0;
  for (Eigen::Index i = 0; i < src.cols() && distinct < 3; ++i) {
    bool seen = false;
    for (Eigen::Index j = 0; j < i && !seen; ++j)
      seen = (src.col(i) - src.col(j)).norm() < 1e-9;
    if (!seen) ++distinct;
  }
  if (distinct < 3) throw FitError("similarity fit: fewer than 3 non-degenerate correspondences");
  Eigen::Matrix<double, 2, Eigen::Dynamic> a = src, b = dst;
  return Eigen::umeyama(a, b, true);
}

inline double similarity_angle(const Eigen::Matrix3d& m) { return std::atan2(m(1, 0), m(0, 0)); }

// Least-squares affine src -> dst: dst = L src + t. Returns 2x3 [L | t].
inline Eigen::Matrix<double, 2, 3> fit_affine(const PointSet& src, const PointSet& dst) {
  const Eigen::Index n = src.cols();
  if (n != dst.cols() || n < 3) throw FitError("affine fit: need at least 3 correspondences");
  // Centre for conditioning.
  Eigen::Vector2d cs = src.rowwise().mean(), cd = dst.rowwise().mean();
  Eigen::MatrixXd a(n, 2), b(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.row(i) = (src.col(i) - cs).transpose();
    b.row(i) = (dst.col(i) - cd).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(sv.size() - 1) / sv(0) < 1e-12)
    throw FitError("affine fit: source points are collinear");
  Eigen::Matrix2d lt = svd.solve(b);  // a * lt = b, so L = lt^T
  Eigen::Matrix<double, 2, 3> out;
  out.leftCols<2>() = lt.transpose();
  out.col(2) = cd - lt.transpose() * cs;
  return out;
}

}  // namespace sstab
