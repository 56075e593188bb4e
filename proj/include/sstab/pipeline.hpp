#pragma once

#include <chrono>
#include <deque>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "sstab/mls.hpp"
#include "sstab/raster.hpp"
#include "sstab/solvers.hpp"
#include "sstab/tracks.hpp"

namespace sstab {

struct PipelineOptions {
  std::size_t window = 5;
  double lambda = 0.3;
  Eigen::Index grid_cols = 20;
  Eigen::Index grid_rows = 20;
  MlsConfig mls;
  std::ostream* warn = &std::cerr;
};

struct StabilizedFrameOutput {
  std::size_t frame_index = 0;
  NodePair nodes;       // empty when the frame is passed through unwarped
  FrameTracks tracks;   // P and F after the frame's own warp
  double lambda = 0.0;  // value in force when the frame's window was solved
  double solve_ms = 0.0;
  double warp_ms = 0.0;
  std::optional<Raster> raster;

  bool warped() const { return !nodes.empty(); }
};

// Online sliding-window stabilizer. Each full window warps only its second
// frame and then shifts by one. Frames leave in order one push after their
// warp, so the first output appears on push T.
class Stabilizer {
 public:
  Stabilizer(std::shared_ptr<const WindowSolver> solver, PipelineOptions opts = {})
      : solver_(std::move(solver)), opts_(opts), lambda_(LambdaSchedule::check(opts.lambda)) {
    if (!solver_) throw ParameterError("stabilizer needs a solver");
    if (opts_.window < 3) throw ParameterError("window length must be at least 3");
  }

  double lambda() const { return lambda_; }
  void set_lambda(double lambda) { lambda_ = LambdaSchedule::check(lambda); }
  std::size_t buffered() const { return buffer_.size(); }

  // A lambda override becomes the current value from this window on.
  std::optional<StabilizedFrameOutput> push_frame(FrameTracks frame, std::optional<double> lambda_override = {},
                                                  std::optional<Raster> raster = {}) {
    if (last_index_ && frame.frame_index != *last_index_ + 1)
      throw SequencingError("frame " + std::to_string(frame.frame_index) + " arrived after frame " +
                            std::to_string(*last_index_));
    if (lambda_override) set_lambda(*lambda_override);
    last_index_ = frame.frame_index;
    buffer_.push_back({std::move(frame), std::move(raster), {}, std::nullopt, 0.0, 0.0});
    if (buffer_.size() < opts_.window) return std::nullopt;
    process_window();
    auto out = emit(std::move(buffer_.front()));
    buffer_.pop_front();
    return out;
  }

  // Emits everything still buffered; frames past the last full window are
  // left unwarped.
  std::vector<StabilizedFrameOutput> flush() {
    std::vector<StabilizedFrameOutput> out;
    while (!buffer_.empty()) {
      out.push_back(emit(std::move(buffer_.front())));
      buffer_.pop_front();
    }
    last_index_.reset();
    return out;
  }

 private:
  struct Slot {
    FrameTracks tracks;
    std::optional<Raster> raster;
    NodePair nodes;
    std::optional<double> lambda;  // set once the frame's window is solved
    double solve_ms = 0.0;
    double warp_ms = 0.0;
  };

  void process_window() {
    Slot& target = buffer_[1];
    target.lambda = lambda_;
    std::vector<FrameTracks> frames;
    for (const auto& s : buffer_) frames.push_back(s.tracks);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const TrackWindow w = make_window(frames, 0, opts_.window);
      const SolverReport r = solver_->solve(w, lambda_);
      const PointSet& q = *w.frames[1].q;
      target.nodes = {q, q + r.displacements[0]};
    } catch (const Error& e) {
      target.nodes = {};
      if (opts_.warn)
        *opts_.warn << "warning: frame " << target.tracks.frame_index << " passed through unwarped: " << e.what()
                    << '\n';
    }
    const auto t1 = std::chrono::steady_clock::now();
    target.solve_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (!target.nodes.empty()) {
      try {
        target.tracks.points_p = mls_warp_points(target.tracks.points_p, target.nodes, opts_.mls);
        if (target.tracks.face) target.tracks.face = mls_warp_points(*target.tracks.face, target.nodes, opts_.mls);
        if (target.raster) target.raster = warp_raster(*target.raster, target.nodes);
      } catch (const Error& e) {
        target.nodes = {};
        target.tracks = frames[1];
        if (opts_.warn)
          *opts_.warn << "warning: frame " << target.tracks.frame_index << " passed through unwarped: " << e.what()
                      << '\n';
      }
    }
    target.warp_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count();
  }

  // Node pairs live in the reference frame; rasters may be at any size.
  Raster warp_raster(const Raster& img, const NodePair& nodes) const {
    const double sx = img.width / kRefWidth, sy = img.height / kRefHeight;
    NodePair scaled = nodes;
    for (PointSet* s : {&scaled.source, &scaled.target}) {
      s->row(0) *= sx;
      s->row(1) *= sy;
    }
    return resample_frame(img, scaled, opts_.grid_cols, opts_.grid_rows, opts_.mls);
  }

  StabilizedFrameOutput emit(Slot&& s) const {
    StabilizedFrameOutput o;
    o.frame_index = s.tracks.frame_index;
    o.lambda = s.lambda.value_or(lambda_);
    o.nodes = std::move(s.nodes);
    o.tracks = std::move(s.tracks);
    o.solve_ms = s.solve_ms;
    o.warp_ms = s.warp_ms;
    o.raster = std::move(s.raster);
    return o;
  }

  std::shared_ptr<const WindowSolver> solver_;
  PipelineOptions opts_;
  double lambda_;
  std::deque<Slot> buffer_;
  std::optional<std::size_t> last_index_;
};

// One JSONL record per output frame, coordinates scaled by (sx, sy).
// Unwarped frames carry empty node arrays.
inline std::string output_record(const StabilizedFrameOutput& o, double sx = 1.0, double sy = 1.0,
                                 bool timing = true) {
  nlohmann::json rec;
  rec["frame"] = o.frame_index;
  rec["Q"] = detail::points_to_json(o.nodes.source, sx, sy);
  rec["Qhat"] = detail::points_to_json(o.nodes.target, sx, sy);
  rec["lambda"] = o.lambda;
  rec["solve_ms"] = timing ? o.solve_ms : 0.0;
  rec["warp_ms"] = timing ? o.warp_ms : 0.0;
  return rec.dump();
}

struct OutputRecord {
  std::size_t frame_index = 0;
  NodePair nodes;
  double lambda = 0.0;
};

// Reads an outputs JSONL file back, scaling coordinates by (sx, sy).
inline std::vector<OutputRecord> load_outputs(std::istream& in, double sx = 1.0, double sy = 1.0) {
  std::vector<OutputRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object() || !rec.contains("frame") || !rec["frame"].is_number_integer())
      throw ParseError(lineno, "expected an output record with \"frame\"");
    if (!rec.contains("Q") || !rec.contains("Qhat")) throw ParseError(lineno, "missing \"Q\" or \"Qhat\"");
    OutputRecord r;
    r.frame_index = rec["frame"].get<std::size_t>();
    r.nodes.source = detail::parse_points(rec["Q"], lineno, "Q");
    r.nodes.target = detail::parse_points(rec["Qhat"], lineno, "Qhat");
    if (r.nodes.source.cols() != r.nodes.target.cols())
      throw StructuralError("line " + std::to_string(lineno) + ": Q and Qhat differ in length");
    for (PointSet* s : {&r.nodes.source, &r.nodes.target}) {
      s->row(0) *= sx;
      s->row(1) *= sy;
    }
    if (rec.contains("lambda") && rec["lambda"].is_number()) r.lambda = rec["lambda"].get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sstab
