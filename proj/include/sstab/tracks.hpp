#pragma once

// Point-track data model: per-frame feature points, their next-frame
// correspondences (the next frame's warp nodes) and face vertices.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sstab/error.hpp"
#include "sstab/geometry.hpp"

namespace sstab {

using Rng = std::mt19937_64;

struct FrameTracks {
  std::size_t frame_index = 1;
  PointSet points_p;                     // P_t
  std::optional<PointSet> nodes_q_next;  // Q_{t+1}, index-aligned with P_t
  std::optional<PointSet> face;          // F_t

  bool face_valid() const { return face.has_value(); }
};

// One frame of a window with everything expressed in that frame's image:
// P_t (absent for the last frame), Q_t (absent for the first) and F_t.
struct WindowFrame {
  std::size_t frame_index = 1;
  std::optional<PointSet> p;
  std::optional<PointSet> q;
  std::optional<PointSet> face;
};

struct TrackWindow {
  std::vector<WindowFrame> frames;

  std::size_t length() const { return frames.size(); }
  std::size_t point_count() const { return frames.empty() ? 0 : static_cast<std::size_t>(frames.front().p->cols()); }
  bool all_faces_valid() const {
    return std::all_of(frames.begin(), frames.end(), [](const WindowFrame& f) { return f.face.has_value(); });
  }

  void validate() const {
    const std::size_t t = frames.size();
    if (t < 3) throw ParameterError("window length must be at least 3");
    const Eigen::Index n = frames[0].p ? frames[0].p->cols() : 0;
    if (n == 0) throw StructuralError("window frame 1 has no points");
    for (std::size_t k = 0; k < t; ++k) {
      const auto& f = frames[k];
      if (k > 0 && f.frame_index != frames[k - 1].frame_index + 1)
        throw StructuralError("window frames are not consecutive");
      if (k + 1 < t && (!f.p || f.p->cols() != n || f.p->rows() != 2))
        throw StructuralError("window frame " + std::to_string(f.frame_index) + ": P missing or wrong size");
      if (k > 0 && (!f.q || f.q->cols() != n || f.q->rows() != 2))
        throw StructuralError("window frame " + std::to_string(f.frame_index) + ": Q missing or wrong size");
      if (f.face && (f.face->cols() != frames[0].face.value_or(*f.face).cols() || f.face->rows() != 2))
        throw StructuralError("window frame " + std::to_string(f.frame_index) + ": face size mismatch");
    }
  }
};

// Builds the window of `length` frames starting at stream position `start`.
inline TrackWindow make_window(std::span<const FrameTracks> stream, std::size_t start, std::size_t length) {
  if (start + length > stream.size()) throw ParameterError("window exceeds stream");
  TrackWindow w;
  w.frames.resize(length);
  for (std::size_t k = 0; k < length; ++k) {
    const FrameTracks& src = stream[start + k];
    WindowFrame& dst = w.frames[k];
    dst.frame_index = src.frame_index;
    if (k + 1 < length) dst.p = src.points_p;
    if (k > 0) {
      const FrameTracks& prev = stream[start + k - 1];
      if (!prev.nodes_q_next)
        throw StructuralError("frame " + std::to_string(prev.frame_index) + " has no next-frame correspondences");
      dst.q = *prev.nodes_q_next;
    }
    dst.face = src.face;
  }
  w.validate();
  return w;
}

// Per-frame foreground weight. Entries act as a step function: frame t uses
// the entry with the greatest key <= t, or the default before the first one.
class LambdaSchedule {
 public:
  explicit LambdaSchedule(double default_value = 0.3) : default_(check(default_value)) {}

  void set(std::size_t frame, double lambda) { entries_[frame] = check(lambda); }
  double default_value() const { return default_; }
  const std::map<std::size_t, double>& entries() const { return entries_; }

  double at(std::size_t frame) const {
    auto it = entries_.upper_bound(frame);
    if (it == entries_.begin()) return default_;
    return std::prev(it)->second;
  }

  static double check(double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ParameterError("lambda must lie strictly inside (0,1)");
    return lambda;
  }

  // Two-column CSV "frame,lambda"; a non-numeric first line is a header.
  static LambdaSchedule parse_csv(std::istream& in, double default_value = 0.3) {
    LambdaSchedule s(default_value);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      auto comma = line.find(',');
      if (comma == std::string::npos) throw ParseError(lineno, "expected frame,lambda");
      try {
        std::size_t used = 0;
        long frame = std::stol(line.substr(0, comma), &used);
        double lambda = std::stod(line.substr(comma + 1));
        if (frame < 0) throw ParseError(lineno, "negative frame index");
        s.set(static_cast<std::size_t>(frame), lambda);
      } catch (const std::invalid_argument&) {
        if (lineno == 1) continue;
        throw ParseError(lineno, "expected frame,lambda");
      } catch (const ParameterError& e) {
        throw ParseError(lineno, e.what());
      }
    }
    return s;
  }

 private:
  double default_;
  std::map<std::size_t, double> entries_;
};

// ---------------------------------------------------------------------------
// Track file I/O

struct TrackStream {
  int width = static_cast<int>(kRefWidth);   // source resolution
  int height = static_cast<int>(kRefHeight);
  std::vector<FrameTracks> frames;           // reference-frame coordinates

  double scale_x() const { return kRefWidth / width; }
  double scale_y() const { return kRefHeight / height; }
};

struct LoadOptions {
  std::size_t point_count = kDefaultPointCount;
  std::uint64_t seed = 7;
  // Overrides (or stands in for) the header record's resolution.
  std::optional<std::pair<int, int>> frame_size;
};

namespace detail {

inline PointSet parse_points(const nlohmann::json& arr, std::size_t line, const char* key) {
  if (!arr.is_array()) throw ParseError(line, std::string("\"") + key + "\" must be an array");
  PointSet out(2, static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& pt = arr[i];
    if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
      throw ParseError(line, std::string("\"") + key + "\"[" + std::to_string(i) + "] is not an [x,y] pair");
    const double x = pt[0].get<double>(), y = pt[1].get<double>();
    if (!std::isfinite(x) || !std::isfinite(y)) throw ParseError(line, "non-finite coordinate");
    out(0, static_cast<Eigen::Index>(i)) = x;
    out(1, static_cast<Eigen::Index>(i)) = y;
  }
  return out;
}

inline nlohmann::json points_to_json(const PointSet& pts, double sx, double sy) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < pts.cols(); ++i) arr.push_back({pts(0, i) * sx, pts(1, i) * sy});
  return arr;
}

inline PointSet select_columns(const PointSet& s, const std::vector<Eigen::Index>& idx) {
  PointSet out(2, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = s.col(idx[k]);
  return out;
}

// n -> target indices. Short sets keep every original and top up with draws
// with replacement; long sets are subsampled without replacement.
inline std::vector<Eigen::Index> resample_indices(Eigen::Index n, std::size_t target, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (static_cast<std::size_t>(n) >= target) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(target);
    std::sort(idx.begin(), idx.end());
    return idx;
  }
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  while (idx.size() < target) idx.push_back(pick(rng));
  return idx;
}

}  // namespace detail

inline TrackStream load_tracks(std::istream& in, const LoadOptions& opts = {}) {
  TrackStream out;
  bool have_header = false;
  if (opts.frame_size) {
    out.width = opts.frame_size->first;
    out.height = opts.frame_size->second;
    have_header = true;
  }
  std::string line;
  std::size_t lineno = 0;
  std::optional<Eigen::Index> face_count;
  std::vector<Eigen::Index> face_index;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) throw ParseError(lineno, "record is not an object");

    if (!rec.contains("frame")) {
      if (!rec.contains("width") || !rec.contains("height") || !rec["width"].is_number_integer() ||
          !rec["height"].is_number_integer())
        throw ParseError(lineno, "expected header {\"width\", \"height\"} or a frame record");
      if (!out.frames.empty()) throw ParseError(lineno, "header after frame records");
      if (!opts.frame_size) {
        out.width = rec["width"].get<int>();
        out.height = rec["height"].get<int>();
      }
      have_header = true;
      continue;
    }
    if (!have_header) throw ParseError(lineno, "frame record before header");
    if (out.width <= 0 || out.height <= 0) throw ParameterError("frame size must be positive");
    if (!rec["frame"].is_number_integer()) throw ParseError(lineno, "\"frame\" must be an integer");
    if (!rec.contains("P")) throw ParseError(lineno, "missing \"P\"");

    FrameTracks ft;
    const long long idx = rec["frame"].get<long long>();
    if (idx < 0) throw ParseError(lineno, "negative frame index");
    ft.frame_index = static_cast<std::size_t>(idx);
    if (!out.frames.empty() && ft.frame_index != out.frames.back().frame_index + 1)
      throw StructuralError("line " + std::to_string(lineno) + ": frame " + std::to_string(ft.frame_index) +
                            " does not follow frame " + std::to_string(out.frames.back().frame_index));

    PointSet p = detail::parse_points(rec["P"], lineno, "P");
    std::optional<PointSet> q;
    if (rec.contains("Qnext") && !rec["Qnext"].is_null()) {
      q = detail::parse_points(rec["Qnext"], lineno, "Qnext");
      if (q->cols() != p.cols())
        throw StructuralError("line " + std::to_string(lineno) + ": Qnext and P differ in length");
    }
    std::optional<PointSet> f;
    if (rec.contains("F") && !rec["F"].is_null()) f = detail::parse_points(rec["F"], lineno, "F");

    if (p.cols() == 0) throw DataError("frame " + std::to_string(ft.frame_index) + " has no points");

    const double sx = out.scale_x(), sy = out.scale_y();
    p.row(0) *= sx;
    p.row(1) *= sy;
    if (q) {
      q->row(0) *= sx;
      q->row(1) *= sy;
    }
    if (f) {
      if (f->cols() == 0) throw DataError("frame " + std::to_string(ft.frame_index) + " has an empty face block");
      f->row(0) *= sx;
      f->row(1) *= sy;
    }

    if (static_cast<std::size_t>(p.cols()) != opts.point_count) {
      Rng rng(opts.seed ^ (0x9E3779B97F4A7C15ULL * (ft.frame_index + 1)));
      auto sel = detail::resample_indices(p.cols(), opts.point_count, rng);
      p = detail::select_columns(p, sel);
      if (q) q = detail::select_columns(*q, sel);
    }
    if (f) {
      // Face vertices correspond across frames, so one index map serves the
      // whole stream.
      if (!face_count) {
        face_count = f->cols();
        if (static_cast<std::size_t>(*face_count) != opts.point_count) {
          Rng rng(opts.seed ^ 0xFACEULL);
          face_index = detail::resample_indices(*face_count, opts.point_count, rng);
        }
      } else if (f->cols() != *face_count) {
        throw StructuralError("line " + std::to_string(lineno) + ": face vertex count changed within stream");
      }
      if (!face_index.empty()) f = detail::select_columns(*f, face_index);
    }
    ft.points_p = std::move(p);
    ft.nodes_q_next = std::move(q);
    ft.face = std::move(f);
    out.frames.push_back(std::move(ft));
  }
  for (std::size_t k = 0; k + 1 < out.frames.size(); ++k)
    if (!out.frames[k].nodes_q_next)
      throw StructuralError("frame " + std::to_string(out.frames[k].frame_index) +
                            " omits Qnext but is not the last frame");
  return out;
}

inline void write_tracks(std::ostream& os, const TrackStream& s) {
  const double sx = 1.0 / s.scale_x(), sy = 1.0 / s.scale_y();
  os << nlohmann::json{{"width", s.width}, {"height", s.height}}.dump() << '\n';
  for (const auto& f : s.frames) {
    nlohmann::json rec;
    rec["frame"] = f.frame_index;
    rec["P"] = detail::points_to_json(f.points_p, sx, sy);
    if (f.nodes_q_next) rec["Qnext"] = detail::points_to_json(*f.nodes_q_next, sx, sy);
    rec["F"] = f.face ? detail::points_to_json(*f.face, sx, sy) : nlohmann::json(nullptr);
    os << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct JitterModel {
  double translation_std = 0.0;  // px per axis
  double rotation_std_deg = 0.0;
  Point2 drift{};                // intentional motion, px per frame
  // When non-empty, replaces the random translation draws frame by frame.
  std::vector<Point2> scripted_translation;
};

struct SyntheticSceneSpec {
  std::size_t frame_count = 60;
  std::size_t background_count = 2048;
  Point2 background_min{-80.0, -80.0};
  Point2 background_max{kRefWidth + 80.0, kRefHeight + 80.0};
  std::size_t face_count = 512;
  Point2 face_center{kRefWidth / 2.0, kRefHeight / 2.0};
  double face_radius = 110.0;
  JitterModel camera;
  JitterModel face;  // on top of the camera motion
  double correspondence_noise = 0.0;
  std::size_t point_count = kDefaultPointCount;
  std::uint64_t seed = 1;

  void validate() const {
    if (frame_count < 1) throw ParameterError("frame_count must be positive");
    if (background_count < point_count || face_count < point_count)
      throw ParameterError("background and face point counts must be at least the sampled count");
    for (double s : {camera.translation_std, camera.rotation_std_deg, face.translation_std,
                     face.rotation_std_deg, correspondence_noise, face_radius})
      if (!(s >= 0.0)) throw ParameterError("standard deviations must be non-negative");
  }
};

struct JitterRecord {
  std::size_t frame_index = 1;
  RigidMotion camera;  // world -> frame
  RigidMotion face;    // face-local motion before the camera
};

struct SyntheticScene {
  TrackStream stream;
  std::vector<JitterRecord> log;
};

namespace detail {

inline RigidMotion draw_motion(const JitterModel& m, std::size_t k, Point2 pivot, Rng& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  RigidMotion r;
  r.pivot = pivot;
  r.angle_rad = deg_to_rad(m.rotation_std_deg * unit(rng));
  Point2 jitter{m.translation_std * unit(rng), m.translation_std * unit(rng)};
  if (k < m.scripted_translation.size()) jitter = m.scripted_translation[k];
  r.shift = jitter + static_cast<double>(k) * m.drift;
  return r;
}

}  // namespace detail

inline SyntheticScene synthesize_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> ux(spec.background_min.x, spec.background_max.x);
  std::uniform_real_distribution<double> uy(spec.background_min.y, spec.background_max.y);
  PointSet world(2, static_cast<Eigen::Index>(spec.background_count));
  for (Eigen::Index i = 0; i < world.cols(); ++i) {
    world(0, i) = ux(rng);
    world(1, i) = uy(rng);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointSet face_cloud(2, static_cast<Eigen::Index>(spec.face_count));
  for (Eigen::Index i = 0; i < face_cloud.cols(); ++i) {
    const double r = spec.face_radius * std::sqrt(unit(rng));
    const double a = 2.0 * std::numbers::pi * unit(rng);
    face_cloud(0, i) = spec.face_center.x + r * std::cos(a);
    face_cloud(1, i) = spec.face_center.y + r * std::sin(a);
  }
  std::vector<Eigen::Index> face_sel = detail::resample_indices(face_cloud.cols(), spec.point_count, rng);
  const PointSet face_mesh = detail::select_columns(face_cloud, face_sel);

  const Point2 center{kRefWidth / 2.0, kRefHeight / 2.0};
  SyntheticScene scene;
  scene.log.resize(spec.frame_count);
  for (std::size_t k = 0; k < spec.frame_count; ++k) {
    scene.log[k].frame_index = k + 1;
    scene.log[k].camera = detail::draw_motion(spec.camera, k, center, rng);
    scene.log[k].face = detail::draw_motion(spec.face, k, spec.face_center, rng);
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  auto add_noise = [&](PointSet& s) {
    if (spec.correspondence_noise <= 0.0) return;
    for (Eigen::Index i = 0; i < s.cols(); ++i) {
      s(0, i) += spec.correspondence_noise * noise(rng);
      s(1, i) += spec.correspondence_noise * noise(rng);
    }
  };

  scene.stream.frames.resize(spec.frame_count);
  for (std::size_t k = 0; k < spec.frame_count; ++k) {
    FrameTracks& ft = scene.stream.frames[k];
    ft.frame_index = k + 1;
    auto sel = detail::resample_indices(world.cols(), spec.point_count, rng);
    const PointSet pts = detail::select_columns(world, sel);
    ft.points_p = scene.log[k].camera.apply(pts);
    add_noise(ft.points_p);
    if (k + 1 < spec.frame_count) {
      ft.nodes_q_next = scene.log[k + 1].camera.apply(pts);
      add_noise(*ft.nodes_q_next);
    }
    ft.face = scene.log[k].camera.apply(scene.log[k].face.apply(face_mesh));
  }
  return scene;
}

inline void write_jitter_log(std::ostream& os, const std::vector<JitterRecord>& log) {
  os << "frame,cam_dx,cam_dy,cam_rot_deg,face_dx,face_dy,face_rot_deg\n";
  std::ostringstream line;
  line.precision(17);
  for (const auto& r : log) {
    line.str("");
    line << r.frame_index << ',' << r.camera.shift.x << ',' << r.camera.shift.y << ','
         << rad_to_deg(r.camera.angle_rad) << ',' << r.face.shift.x << ',' << r.face.shift.y << ','
         << rad_to_deg(r.face.angle_rad) << '\n';
    os << line.str();
  }
}

// Shaky selfie-like scene used for toy training and held-out evaluation.
inline SyntheticSceneSpec toy_scene_spec(std::uint64_t seed, std::size_t frames = 24) {
  SyntheticSceneSpec spec;
  spec.frame_count = frames;
  spec.seed = seed;
  spec.camera.translation_std = 4.0;
  spec.camera.rotation_std_deg = 0.5;
  spec.face.translation_std = 3.0;
  return spec;
}

// `count` windows of `length` frames cut from consecutive toy scenes seeded
// seed, seed + 1, ...
inline std::vector<TrackWindow> synthetic_windows(std::size_t count, std::size_t length, std::uint64_t seed,
                                                  std::size_t scene_frames = 24) {
  if (scene_frames < length) throw ParameterError("scene shorter than the window");
  std::vector<TrackWindow> out;
  for (std::uint64_t s = seed; out.size() < count; ++s) {
    const SyntheticScene scene = synthesize_scene(toy_scene_spec(s, scene_frames));
    for (std::size_t k = 0; k + length <= scene_frames && out.size() < count; ++k)
      out.push_back(make_window(scene.stream.frames, k, length));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training augmentation

struct AugmentDraw {
  std::size_t frame_index = 0;
  double angle_deg = 0.0;
  Point2 shift{};
};

struct AugmentRanges {
  double max_angle_deg = 10.0;
  double max_shift = 50.0;
};

// Perturbs every interior frame's P/Q/F with its own random rotation about
// the frame centre plus a translation. First and last frames are untouched.
inline TrackWindow augment_window(const TrackWindow& window, Rng& rng, std::vector<AugmentDraw>* draws = nullptr,
                                  const AugmentRanges& ranges = {}) {
  if (window.length() < 3) throw ParameterError("augmentation needs a window of length >= 3");
  std::uniform_real_distribution<double> angle(-ranges.max_angle_deg, ranges.max_angle_deg);
  std::uniform_real_distribution<double> shift(-ranges.max_shift, ranges.max_shift);
  TrackWindow out = window;
  if (draws) draws->clear();
  for (std::size_t k = 1; k + 1 < out.length(); ++k) {
    AugmentDraw d;
    d.frame_index = out.frames[k].frame_index;
    d.angle_deg = angle(rng);
    d.shift = {shift(rng), shift(rng)};
    RigidMotion m{deg_to_rad(d.angle_deg), d.shift, {kRefWidth / 2.0, kRefHeight / 2.0}};
    auto& f = out.frames[k];
    if (f.p) f.p = m.apply(*f.p);
    if (f.q) f.q = m.apply(*f.q);
    if (f.face) f.face = m.apply(*f.face);
    if (draws) draws->push_back(d);
  }
  return out;
}

}  // namespace sstab
