#pragma once

// Rigid moving-least-squares deformation driven by warp nodes, its sparse
// grid approximation, and raster resampling.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sstab/error.hpp"
#include "sstab/geometry.hpp"
#include "sstab/parallel.hpp"
#include "sstab/raster.hpp"

namespace sstab {

struct MlsConfig {
  double alpha = 0.3;          // weight w_i = |v - q_i|^(-2 alpha)
  double epsilon_snap = 1e-6;  // px; queries this close to a node return its target
  double degenerate_tol = 1e-12;

  void validate() const {
    if (!(alpha > 0.0)) throw ParameterError("MLS alpha must be positive");
    if (!(epsilon_snap > 0.0)) throw ParameterError("MLS snap radius must be positive");
  }
};

// Node sources Q and their targets Q-hat, index-aligned (2 x M each).
struct NodePair {
  PointSet source;
  PointSet target;

  Eigen::Index size() const { return source.cols(); }
  bool empty() const { return source.cols() == 0; }

  void validate() const {
    if (source.rows() != 2 || target.rows() != 2 || source.cols() != target.cols())
      throw ShapeError("node pair: source and target must both be 2 x M");
    if (source.cols() == 0) throw ParameterError("node pair: no warp nodes");
  }

  NodePair swapped() const { return {target, source}; }
  static NodePair identity(const PointSet& q) { return {q, q}; }
};

namespace detail {

// Scratch for one query: per-node weights.
struct MlsScratch {
  std::vector<double> w;
};

// Core rigid MLS evaluation for a single query. All positions are taken
// relative to v so that identity targets reproduce v bit-for-bit.
inline Point2 rigid_mls(Point2 v, const double* qx, const double* qy, const double* tx, const double* ty,
                        Eigen::Index m, const MlsConfig& cfg, MlsScratch& scratch, std::size_t query_id) {
  scratch.w.resize(static_cast<std::size_t>(m));
  double* w = scratch.w.data();
  const double snap2 = cfg.epsilon_snap * cfg.epsilon_snap;
  double total = 0.0, sx = 0.0, sy = 0.0, hx = 0.0, hy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double dx = qx[i] - v.x, dy = qy[i] - v.y;
    const double r2 = dx * dx + dy * dy;
    if (r2 < snap2) return {tx[i], ty[i]};
    const double wi = std::pow(r2, -cfg.alpha);
    w[i] = wi;
    total += wi;
    sx += wi * dx;
    sy += wi * dy;
    hx += wi * (tx[i] - v.x);
    hy += wi * (ty[i] - v.y);
  }
  const double cx = sx / total, cy = sy / total;  // c - v
  const double chx = hx / total, chy = hy / total;  // c-hat - v
  double z1 = 0.0, z2 = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double a = (qx[i] - v.x) - cx, b = (qy[i] - v.y) - cy;
    const double ap = (tx[i] - v.x) - chx, bp = (ty[i] - v.y) - chy;
    z1 += w[i] * (a * ap + b * bp);
    z2 += w[i] * (b * ap - a * bp);
  }
  const double rho = std::sqrt(z1 * z1 + z2 * z2);
  if (!(rho >= cfg.degenerate_tol))
    throw DegenerateWarpError(query_id, "rigid MLS degenerate at query " + std::to_string(query_id) + " (" +
                                            std::to_string(v.x) + ", " + std::to_string(v.y) + ")");
  const double e1 = z1 / rho, e2 = z2 / rho;
  const double ux = -cx, uy = -cy;  // v - c
  return {v.x + (chx + (e1 * ux + e2 * uy)), v.y + (chy + (e1 * uy - e2 * ux))};
}

}  // namespace detail

inline Point2 mls_warp_point(Point2 v, const NodePair& nodes, const MlsConfig& cfg = {}, std::size_t query_id = 0) {
  nodes.validate();
  detail::MlsScratch scratch;
  return detail::rigid_mls(v, nodes.source.row(0).data(), nodes.source.row(1).data(), nodes.target.row(0).data(),
                           nodes.target.row(1).data(), nodes.size(), cfg, scratch, query_id);
}

// Element-wise mls_warp_point over a 2 x N set; output index-aligned.
inline PointSet mls_warp_points(const PointSet& points, const NodePair& nodes, const MlsConfig& cfg = {}) {
  nodes.validate();
  PointSet out(2, points.cols());
  const double* qx = nodes.source.row(0).data();
  const double* qy = nodes.source.row(1).data();
  const double* tx = nodes.target.row(0).data();
  const double* ty = nodes.target.row(1).data();
  parallel_for(static_cast<std::size_t>(points.cols()), [&](std::size_t begin, std::size_t end) {
    detail::MlsScratch scratch;
    for (std::size_t j = begin; j < end; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      set_point(out, jj, detail::rigid_mls(point_at(points, jj), qx, qy, tx, ty, nodes.size(), cfg, scratch, j));
    }
  });
  return out;
}

// Rigid MLS with the queries and node sources frozen. The weights, the
// centred sources and the centroids only depend on those, so the warp
// becomes a few matrix products in the targets; this is the form the
// solvers differentiate through.
class MlsPlan {
 public:
  struct Cache {
    Eigen::MatrixX2d centroid;  // weighted mean displacement per query
    Eigen::MatrixX2d z;         // (Z1, Z2) per query
  };

  MlsPlan() = default;

  MlsPlan(const PointSet& queries, const PointSet& sources, const MlsConfig& cfg = {}) : cfg_(cfg) {
    cfg.validate();
    if (queries.rows() != 2 || sources.rows() != 2) throw ShapeError("MLS plan: point sets must be 2 x N");
    if (sources.cols() == 0) throw ParameterError("MLS plan: no warp nodes");
    const Eigen::Index n = queries.cols(), m = sources.cols();
    queries_ = queries;
    sources_ = sources;
    origin_ = sources.rowwise().mean();
    local_.resize(m, 2);
    local_.col(0) = (sources.row(0).array() - origin_(0)).transpose();
    local_.col(1) = (sources.row(1).array() - origin_(1)).transpose();
    weight_.setZero(n, m);
    total_.setZero(n);
    z0_.setZero(n);
    u_.setZero(n, 2);
    s_.setZero(n, 2);
    mean_.setZero(n, 2);
    snap_.assign(static_cast<std::size_t>(n), -1);
    const double snap2 = cfg.epsilon_snap * cfg.epsilon_snap;
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
      std::vector<double> w(static_cast<std::size_t>(m));
      for (std::size_t jj = begin; jj < end; ++jj) {
        const auto j = static_cast<Eigen::Index>(jj);
        const double vx = queries(0, j), vy = queries(1, j);
        double total = 0.0, sx = 0.0, sy = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          const double dx = sources(0, i) - vx, dy = sources(1, i) - vy;
          const double r2 = dx * dx + dy * dy;
          if (r2 < snap2) {
            snap_[jj] = i;
            break;
          }
          w[static_cast<std::size_t>(i)] = std::pow(r2, -cfg.alpha);
          total += w[static_cast<std::size_t>(i)];
          sx += w[static_cast<std::size_t>(i)] * dx;
          sy += w[static_cast<std::size_t>(i)] * dy;
        }
        if (snap_[jj] >= 0) continue;
        const double cx = sx / total, cy = sy / total;
        u_(j, 0) = -cx;
        u_(j, 1) = -cy;
        mean_(j, 0) = (vx - origin_(0)) + cx;
        mean_(j, 1) = (vy - origin_(1)) + cy;
        total_(j) = total;
        double ssx = 0.0, ssy = 0.0, zz = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          const double wi = w[static_cast<std::size_t>(i)];
          const double a = (sources(0, i) - vx) - cx, b = (sources(1, i) - vy) - cy;
          weight_(j, i) = wi / total;
          ssx += wi * a;
          ssy += wi * b;
          zz += wi * (a * a + b * b);
        }
        s_(j, 0) = ssx;
        s_(j, 1) = ssy;
        z0_(j) = zz;
      }
    });
  }

  Eigen::Index query_count() const { return queries_.cols(); }
  Eigen::Index node_count() const { return weight_.cols(); }
  const PointSet& queries() const { return queries_; }
  const PointSet& sources() const { return sources_; }

  // Evaluated in displacement form D = targets - sources so that identity
  // targets reproduce the queries bit-exactly. With q* = q - c the rotation
  // terms sum_i w q*_i D_i expand to W (wn (q D) - c wn D), one product
  // with the normalised weights wn.
  PointSet apply(const PointSet& targets, Cache* cache = nullptr) const {
    check_targets(targets);
    const Eigen::Index n = query_count(), m = node_count();
    Eigen::Matrix<double, Eigen::Dynamic, 6> rhs(m, 6);
    rhs.col(0) = (targets.row(0) - sources_.row(0)).transpose();
    rhs.col(1) = (targets.row(1) - sources_.row(1)).transpose();
    rhs.col(2) = local_.col(0).cwiseProduct(rhs.col(0));
    rhs.col(3) = local_.col(0).cwiseProduct(rhs.col(1));
    rhs.col(4) = local_.col(1).cwiseProduct(rhs.col(0));
    rhs.col(5) = local_.col(1).cwiseProduct(rhs.col(1));
    const Eigen::Matrix<double, Eigen::Dynamic, 6> acc = weight_ * rhs;
    Eigen::MatrixX2d centroid = acc.leftCols<2>();
    Eigen::MatrixX2d z(n, 2);
    PointSet out(2, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Index k = snap_[static_cast<std::size_t>(j)];
      if (k >= 0) {
        out.col(j) = targets.col(k);
        z.row(j).setZero();
        continue;
      }
      const double mx = centroid(j, 0), my = centroid(j, 1);
      const double cx = mean_(j, 0), cy = mean_(j, 1), w = total_(j);
      // sum w a Dx + sum w b Dy and sum w b Dx - sum w a Dy
      const double sadx = w * (acc(j, 2) - cx * mx), sady = w * (acc(j, 3) - cx * my);
      const double sbdx = w * (acc(j, 4) - cy * mx), sbdy = w * (acc(j, 5) - cy * my);
      z(j, 0) = z0_(j) + (sadx + sbdy) - (mx * s_(j, 0) + my * s_(j, 1));
      z(j, 1) = (sbdx - sady) - (mx * s_(j, 1) - my * s_(j, 0));
      const double z1 = z(j, 0), z2 = z(j, 1);
      const double rho = std::sqrt(z1 * z1 + z2 * z2);
      if (!(rho >= cfg_.degenerate_tol))
        throw DegenerateWarpError(static_cast<std::size_t>(j),
                                  "rigid MLS degenerate at query " + std::to_string(j));
      const double e1 = z1 / rho, e2 = z2 / rho;
      const double ux = u_(j, 0), uy = u_(j, 1);
      out(0, j) = queries_(0, j) + (mx + ((e1 - 1.0) * ux + e2 * uy));
      out(1, j) = queries_(1, j) + (my + ((e1 - 1.0) * uy - e2 * ux));
    }
    if (cache) {
      cache->centroid = std::move(centroid);
      cache->z = std::move(z);
    }
    return out;
  }

  // Accumulates d(loss)/d(targets) into grad_targets given d(loss)/d(output).
  void backward(const Cache& cache, const PointSet& grad_out, PointSet& grad_targets) const {
    const Eigen::Index n = query_count(), m = node_count();
    if (grad_out.rows() != 2 || grad_out.cols() != n) throw ShapeError("MLS plan backward: gradient shape");
    if (grad_targets.rows() != 2 || grad_targets.cols() != m)
      throw ShapeError("MLS plan backward: target gradient shape");
    Eigen::Matrix<double, Eigen::Dynamic, 8> g = Eigen::Matrix<double, Eigen::Dynamic, 8>::Zero(n, 8);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Index k = snap_[static_cast<std::size_t>(j)];
      const double gx = grad_out(0, j), gy = grad_out(1, j);
      if (k >= 0) {
        grad_targets(0, k) += gx;
        grad_targets(1, k) += gy;
        continue;
      }
      const double z1 = cache.z(j, 0), z2 = cache.z(j, 1);
      const double rho = std::sqrt(z1 * z1 + z2 * z2);
      const double e1 = z1 / rho, e2 = z2 / rho;
      const double ux = u_(j, 0), uy = u_(j, 1);
      // h = (e2 u - e1 u_perp) / rho with u_perp = (uy, -ux)
      const double hx = (e2 * ux - e1 * uy) / rho, hy = (e2 * uy + e1 * ux) / rho;
      const double gh = gx * hx + gy * hy;
      const double gz1 = e2 * gh, gz2 = -e1 * gh;
      const double w = total_(j), cx = mean_(j, 0), cy = mean_(j, 1);
      // the centroid enters through ĉ directly and through the c wn D terms
      const double gmx = gx - gz1 * s_(j, 0) - gz2 * s_(j, 1) - w * (gz1 * cx + gz2 * cy);
      const double gmy = gy - gz1 * s_(j, 1) + gz2 * s_(j, 0) - w * (gz1 * cy - gz2 * cx);
      g(j, 0) = gmx;
      g(j, 1) = gmy;
      g(j, 2) = w * gz1;
      g(j, 3) = w * gz2;
    }
    const Eigen::Matrix<double, Eigen::Dynamic, 8> back = weight_.transpose() * g;  // only 4 columns used
    for (Eigen::Index i = 0; i < m; ++i) {
      const double qx = local_(i, 0), qy = local_(i, 1);
      const double a1 = back(i, 2), a2 = back(i, 3);
      grad_targets(0, i) += back(i, 0) + qx * a1 + qy * a2;
      grad_targets(1, i) += back(i, 1) + qy * a1 - qx * a2;
    }
  }

 private:
  void check_targets(const PointSet& targets) const {
    if (targets.rows() != 2 || targets.cols() != node_count())
      throw ShapeError("MLS plan: targets must be 2 x " + std::to_string(node_count()));
  }

  MlsConfig cfg_;
  PointSet queries_;
  PointSet sources_;
  Eigen::Vector2d origin_;
  Eigen::MatrixX2d local_;  // sources - origin, M x 2
  Tensor weight_;           // N x M, w_ji / W_j
  Eigen::VectorXd total_;   // W_j
  Eigen::VectorXd z0_;      // sum_i w |q*_i|^2
  Eigen::MatrixX2d u_;      // v - c
  Eigen::MatrixX2d mean_;   // c - origin
  Eigen::MatrixX2d s_;      // sum_i w q*_i (zero up to rounding)
  std::vector<Eigen::Index> snap_;
};

// ---------------------------------------------------------------------------
// Grid approximation

struct GridCell {
  Eigen::Index col = 0, row = 0;
  double fx = 0.0, fy = 0.0;

  // Bilinear weights for vertices (c,r), (c+1,r), (c,r+1), (c+1,r+1).
  std::array<double, 4> weights() const {
    return {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
  }
};

struct WarpGrid {
  double width = kRefWidth;
  double height = kRefHeight;
  Eigen::Index cols = 20;
  Eigen::Index rows = 20;
  PointSet source;  // 2 x (cols+1)(rows+1), row-major over the lattice
  PointSet warped;

  Eigen::Index vertex_count() const { return (cols + 1) * (rows + 1); }
  Eigen::Index vertex(Eigen::Index c, Eigen::Index r) const { return r * (cols + 1) + c; }
  double cell_width() const { return width / static_cast<double>(cols); }
  double cell_height() const { return height / static_cast<double>(rows); }
  double x_at(Eigen::Index c) const { return static_cast<double>(c) * width / static_cast<double>(cols); }
  double y_at(Eigen::Index r) const { return static_cast<double>(r) * height / static_cast<double>(rows); }

  // Enclosing cell; queries outside the lattice use the nearest boundary
  // cell and extrapolate its bilinear weights.
  GridCell locate(Point2 v) const {
    GridCell cell;
    auto c = static_cast<Eigen::Index>(std::floor(v.x * static_cast<double>(cols) / width));
    auto r = static_cast<Eigen::Index>(std::floor(v.y * static_cast<double>(rows) / height));
    cell.col = std::clamp<Eigen::Index>(c, 0, cols - 1);
    cell.row = std::clamp<Eigen::Index>(r, 0, rows - 1);
    const double x0 = x_at(cell.col), x1 = x_at(cell.col + 1);
    const double y0 = y_at(cell.row), y1 = y_at(cell.row + 1);
    cell.fx = (v.x - x0) / (x1 - x0);
    cell.fy = (v.y - y0) / (y1 - y0);
    return cell;
  }
};

inline WarpGrid build_grid(double width, double height, Eigen::Index cols = 20, Eigen::Index rows = 20) {
  if (cols < 1 || rows < 1) throw ParameterError("grid needs at least one cell per axis");
  if (!(width > 0.0 && height > 0.0)) throw ParameterError("grid coverage must be positive");
  WarpGrid g;
  g.width = width;
  g.height = height;
  g.cols = cols;
  g.rows = rows;
  g.source.resize(2, g.vertex_count());
  for (Eigen::Index r = 0; r <= rows; ++r)
    for (Eigen::Index c = 0; c <= cols; ++c) set_point(g.source, g.vertex(c, r), {g.x_at(c), g.y_at(r)});
  g.warped = g.source;
  return g;
}

inline WarpGrid warp_grid(const WarpGrid& grid, const NodePair& nodes, const MlsConfig& cfg = {}) {
  WarpGrid out = grid;
  out.warped = mls_warp_points(grid.source, nodes, cfg);
  return out;
}

inline Point2 grid_warp_point(Point2 v, const WarpGrid& grid) {
  const GridCell cell = grid.locate(v);
  const auto w = cell.weights();
  const Eigen::Index ids[4] = {grid.vertex(cell.col, cell.row), grid.vertex(cell.col + 1, cell.row),
                               grid.vertex(cell.col, cell.row + 1), grid.vertex(cell.col + 1, cell.row + 1)};
  Point2 out{0.0, 0.0};
  for (int k = 0; k < 4; ++k) {
    out.x += w[static_cast<std::size_t>(k)] * grid.warped(0, ids[k]);
    out.y += w[static_cast<std::size_t>(k)] * grid.warped(1, ids[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raster resampling (backward mapping)

namespace detail {

inline void sample_bilinear(const Raster& img, double sx, double sy, std::uint8_t* px) {
  constexpr double slack = 1e-6;
  const double maxx = img.width - 1, maxy = img.height - 1;
  if (!(sx >= -slack && sx <= maxx + slack && sy >= -slack && sy <= maxy + slack)) {
    for (int c = 0; c < img.channels; ++c) px[c] = 0;
    return;
  }
  sx = std::clamp(sx, 0.0, maxx);
  sy = std::clamp(sy, 0.0, maxy);
  const int x0 = std::min(static_cast<int>(sx), std::max(img.width - 2, 0));
  const int y0 = std::min(static_cast<int>(sy), std::max(img.height - 2, 0));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0, fy = sy - y0;
  for (int c = 0; c < img.channels; ++c) {
    const double v = (1 - fx) * (1 - fy) * img.at(x0, y0, c) + fx * (1 - fy) * img.at(x1, y0, c) +
                     (1 - fx) * fy * img.at(x0, y1, c) + fx * fy * img.at(x1, y1, c);
    px[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
}

}  // namespace detail

// Warps `image` by the node pair: content at Q moves to Q-hat. The output
// lattice is warped with swapped roles W(.; Q-hat, Q) to find each output
// pixel's source position; samples falling outside the input are black.
inline Raster resample_frame(const Raster& image, const NodePair& nodes, Eigen::Index grid_cols = 20,
                             Eigen::Index grid_rows = 20, const MlsConfig& cfg = {}) {
  const WarpGrid grid = warp_grid(build_grid(image.width, image.height, grid_cols, grid_rows), nodes.swapped(), cfg);
  Raster out(image.width, image.height, image.channels);
  parallel_for(static_cast<std::size_t>(image.height), [&](std::size_t begin, std::size_t end) {
    for (std::size_t y = begin; y < end; ++y)
      for (int x = 0; x < image.width; ++x) {
        const Point2 src = grid_warp_point({static_cast<double>(x), static_cast<double>(y)}, grid);
        detail::sample_bilinear(image, src.x, src.y, &out.at(x, static_cast<int>(y), 0));
      }
  }, 1);
  return out;
}

// Same mapping with a full MLS evaluation per pixel.
inline Raster resample_frame_dense(const Raster& image, const NodePair& nodes, const MlsConfig& cfg = {}) {
  const NodePair back = nodes.swapped();
  back.validate();
  Raster out(image.width, image.height, image.channels);
  const double* qx = back.source.row(0).data();
  const double* qy = back.source.row(1).data();
  const double* tx = back.target.row(0).data();
  const double* ty = back.target.row(1).data();
  parallel_for(static_cast<std::size_t>(image.height), [&](std::size_t begin, std::size_t end) {
    detail::MlsScratch scratch;
    for (std::size_t y = begin; y < end; ++y)
      for (int x = 0; x < image.width; ++x) {
        const std::size_t id = y * static_cast<std::size_t>(image.width) + static_cast<std::size_t>(x);
        const Point2 src = detail::rigid_mls({static_cast<double>(x), static_cast<double>(y)}, qx, qy, tx, ty,
                                             back.size(), cfg, scratch, id);
        detail::sample_bilinear(image, src.x, src.y, &out.at(x, static_cast<int>(y), 0));
      }
  }, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark support

// Nodes spread uniformly over [0,width]x[0,height]; targets displaced by a
// low-frequency sinusoid of the given amplitude.
inline NodePair smooth_node_field(Eigen::Index count, double amplitude, std::uint64_t seed,
                                  double width = kRefWidth, double height = kRefHeight) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, height), phase(0.0, 2.0 * std::numbers::pi);
  const double px = phase(rng), py = phase(rng);
  NodePair np;
  np.source.resize(2, count);
  np.target.resize(2, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const double x = ux(rng), y = uy(rng);
    np.source(0, i) = x;
    np.source(1, i) = y;
    const double a = 2.0 * std::numbers::pi * x / width, b = 2.0 * std::numbers::pi * y / height;
    np.target(0, i) = x + amplitude * std::sin(a + px) * std::cos(0.5 * b);
    np.target(1, i) = y + amplitude * std::cos(b + py) * std::sin(0.5 * a + px);
  }
  return np;
}

struct BenchResult {
  Eigen::Index nodes = 0;
  Eigen::Index grid_cols = 0, grid_rows = 0;
  int width = 0, height = 0;
  double dense_ms = 0.0;
  double grid_ms = 0.0;
  double speedup() const { return grid_ms > 0.0 ? dense_ms / grid_ms : 0.0; }
};

inline Raster test_pattern(int width, int height, int channels = 3) {
  Raster r(width, height, channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        r.at(x, y, c) = static_cast<std::uint8_t>(127.5 + 100.0 * std::sin(2.0 * std::numbers::pi * x / 64.0 + c) *
                                                              std::sin(2.0 * std::numbers::pi * y / 64.0));
  return r;
}

// Median-of-`repeats` wall time of dense per-pixel MLS vs the grid path on
// the same frame and nodes.
inline BenchResult bench_warp(int width, int height, Eigen::Index nodes, Eigen::Index grid_cols = 20,
                              Eigen::Index grid_rows = 20, int repeats = 3, std::uint64_t seed = 1,
                              const MlsConfig& cfg = {}, int dense_repeats = -1) {
  if (width <= 0 || height <= 0 || nodes <= 0 || repeats <= 0) throw ParameterError("bench: invalid dimensions");
  if (dense_repeats <= 0) dense_repeats = repeats;
  const NodePair np = smooth_node_field(nodes, 8.0, seed, width, height);
  const Raster img = test_pattern(width, height);
  auto time_ms = [](auto&& fn, int k) {
    std::vector<double> t;
    for (int i = 0; i < k; ++i) {
      auto t0 = std::chrono::steady_clock::now();
      fn();
      t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
  };
  BenchResult r;
  r.nodes = nodes;
  r.grid_cols = grid_cols;
  r.grid_rows = grid_rows;
  r.width = width;
  r.height = height;
  r.grid_ms = time_ms([&] { (void)resample_frame(img, np, grid_cols, grid_rows, cfg); }, repeats);
  r.dense_ms = time_ms([&] { (void)resample_frame_dense(img, np, cfg); }, dense_repeats);
  return r;
}

}  // namespace sstab
