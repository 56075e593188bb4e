#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sstab/metrics.hpp"
#include "sstab/network.hpp"
#include "sstab/pipeline.hpp"
#include "sstab/solvers.hpp"
#include "sstab/tracks.hpp"

using namespace sstab;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

// Parses "WxH" (also used for grid dimensions).
std::pair<int, int> parse_dims(const std::string& s, const char* what) {
  int a = 0, b = 0;
  char x = 0, extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &a, &x, &b, &extra) != 3 || (x != 'x' && x != 'X') || a <= 0 || b <= 0)
    throw CLI::ValidationError(std::string(what) + ": expected WxH, got " + s);
  return {a, b};
}

const CLI::Validator kOpenUnit = CLI::Validator(
    [](std::string& v) -> std::string {
      try {
        const double x = std::stod(v);
        if (x > 0.0 && x < 1.0) return {};
      } catch (const std::exception&) {
      }
      return "value must lie strictly inside (0,1)";
    },
    "(0,1)");

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::string frame_path(const std::string& dir, const std::string& pattern, std::size_t index) {
  std::vector<char> buf(pattern.size() + 32);
  std::snprintf(buf.data(), buf.size(), pattern.c_str(), static_cast<int>(index));
  return (std::filesystem::path(dir) / buf.data()).string();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, log;
  std::size_t frames = 60, points = kDefaultPointCount;
  std::uint64_t seed = 1;
  double jitter = 4.0, rotation = 0.0, face_jitter = 0.0, face_rotation = 0.0, noise = 0.0;
  double drift_x = 0.0, drift_y = 0.0;
  std::string size = "832x448";
};

int run_synth(const SynthArgs& a) {
  SyntheticSceneSpec spec;
  spec.frame_count = a.frames;
  spec.point_count = a.points;
  spec.seed = a.seed;
  spec.camera.translation_std = a.jitter;
  spec.camera.rotation_std_deg = a.rotation;
  spec.camera.drift = {a.drift_x, a.drift_y};
  spec.face.translation_std = a.face_jitter;
  spec.face.rotation_std_deg = a.face_rotation;
  spec.correspondence_noise = a.noise;
  SyntheticScene scene = synthesize_scene(spec);
  std::tie(scene.stream.width, scene.stream.height) = parse_dims(a.size, "--size");
  auto out = open_out(a.out);
  write_tracks(out, scene.stream);
  if (!a.log.empty()) {
    auto log = open_out(a.log);
    write_jitter_log(log, scene.log);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct StabilizeArgs {
  std::string input, output, solver = "direct", weights, schedule, frames_in, frames_out;
  std::string pattern = "frame_%06d.ppm", grid = "20x20";
  double lambda = 0.3, alpha = 0.3, lr = 0.1;
  std::size_t window = 5, nodes = kDefaultPointCount, iters = 1000;
  std::uint64_t seed = 1;
  bool timing = false;
};

int run_stabilize(const StabilizeArgs& a) {
  LoadOptions lo;
  lo.point_count = a.nodes;
  lo.seed = a.seed;
  auto in = open_in(a.input);
  const TrackStream stream = load_tracks(in, lo);
  const auto [gc, gr] = parse_dims(a.grid, "--grid");

  ObjectiveConfig obj;
  obj.mls.alpha = a.alpha;
  std::shared_ptr<const WindowSolver> solver;
  if (a.solver == "net") {
    if (a.weights.empty()) throw CLI::ValidationError("--solver net requires --weights");
    auto win = open_in(a.weights);
    NetWeights w = load_weights(win);
    if (w.window != a.window)
      throw DataError("weights were trained for window " + std::to_string(w.window) + ", not " +
                      std::to_string(a.window));
    if (static_cast<std::size_t>(w.points) != a.nodes)
      throw DataError("weights expect " + std::to_string(w.points) + " nodes, not " + std::to_string(a.nodes));
    solver = std::make_shared<NetworkSolver>(std::move(w), obj);
  } else {
    DirectOptions d;
    d.iterations = a.iters;
    d.adam.lr = a.lr;
    d.objective = obj;
    solver = std::make_shared<DirectSolver>(d);
  }

  LambdaSchedule schedule(a.lambda);
  if (!a.schedule.empty()) {
    auto s = open_in(a.schedule);
    schedule = LambdaSchedule::parse_csv(s, a.lambda);
  }

  PipelineOptions po;
  po.window = a.window;
  po.lambda = a.lambda;
  po.grid_cols = gc;
  po.grid_rows = gr;
  po.mls.alpha = a.alpha;
  Stabilizer stab(solver, po);

  auto out = open_out(a.output);
  const double sx = 1.0 / stream.scale_x(), sy = 1.0 / stream.scale_y();
  if (!a.frames_out.empty()) std::filesystem::create_directories(a.frames_out);
  auto write = [&](const StabilizedFrameOutput& o) {
    out << output_record(o, sx, sy, a.timing) << '\n';
    if (o.raster && !a.frames_out.empty()) write_pnm_file(frame_path(a.frames_out, a.pattern, o.frame_index), *o.raster);
  };
  const std::size_t first = stream.frames.empty() ? 0 : stream.frames.front().frame_index;
  for (const auto& f : stream.frames) {
    // The window completed by this push warps frame f - T + 2.
    const std::size_t warped = f.frame_index + 2 >= first + a.window ? f.frame_index + 2 - a.window : first;
    std::optional<Raster> raster;
    if (!a.frames_in.empty()) raster = read_pnm_file(frame_path(a.frames_in, a.pattern, f.frame_index));
    if (auto o = stab.push_frame(f, schedule.at(warped), std::move(raster))) write(*o);
  }
  for (const auto& o : stab.flush()) write(o);
  if (!out) throw DataError("write failed: " + a.output);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string output, curve, init;
  std::vector<std::string> inputs;
  std::size_t synthetic = 200, epochs = 30, window = 5;
  long channels = 128;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  bool no_augment = false, no_permute = false, quiet = false;
};

int run_train(const TrainArgs& a) {
  std::vector<TrackWindow> windows;
  if (a.inputs.empty()) {
    windows = synthetic_windows(a.synthetic, a.window, a.seed);
  } else {
    for (const auto& path : a.inputs) {
      auto in = open_in(path);
      LoadOptions lo;
      lo.seed = a.seed;
      const TrackStream s = load_tracks(in, lo);
      for (std::size_t k = 0; k + a.window <= s.frames.size(); ++k) windows.push_back(make_window(s.frames, k, a.window));
    }
    if (windows.empty()) throw DataError("no training windows of length " + std::to_string(a.window));
  }
  NetWeights init;
  if (!a.init.empty()) {
    auto in = open_in(a.init);
    init = load_weights(in);
  } else {
    init = init_weights(a.channels, a.window, a.seed);
  }
  TrainOptions opts;
  opts.epochs = a.epochs;
  opts.adam.lr = a.lr;
  opts.seed = a.seed;
  opts.augment = !a.no_augment;
  opts.permute = !a.no_permute;
  const TrainResult r = train(windows, init, opts, [&](const EpochStats& e) {
    if (!a.quiet)
      std::cerr << "epoch " << e.epoch << ": loss " << e.mean_loss << " (baseline " << e.mean_baseline << ")\n";
  });
  auto out = open_out(a.output);
  save_weights(out, r.weights);
  if (!a.curve.empty()) {
    auto c = open_out(a.curve);
    write_loss_curve(c, r.curve);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string out, latency_out, raster = "832x448", grid = "20x20";
  long nodes = 512, channels = 128;
  int repeats = 3, dense_repeats = 1;
  std::uint64_t seed = 1;
};

int run_bench(const BenchArgs& a) {
  const auto [w, h] = parse_dims(a.raster, "--raster");
  const auto [gc, gr] = parse_dims(a.grid, "--grid");
  const BenchResult r = bench_warp(w, h, a.nodes, gc, gr, a.repeats, a.seed, {}, a.dense_repeats);
  std::ostringstream csv;
  csv.precision(6);
  csv << "nodes,width,height,grid_cols,grid_rows,dense_ms,grid_ms,speedup\n"
      << r.nodes << ',' << r.width << ',' << r.height << ',' << r.grid_cols << ',' << r.grid_rows << ','
      << r.dense_ms << ',' << r.grid_ms << ',' << r.speedup() << '\n';
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    auto out = open_out(a.out);
    out << csv.str();
  }
  if (!a.latency_out.empty()) {
    // Per-frame cost with the network solver: inference, grid build and
    // raster warp, each the median of `repeats` runs.
    const NetWeights weights = init_weights(a.channels, 5, a.seed);
    SyntheticSceneSpec spec;
    spec.frame_count = 5;
    spec.camera.translation_std = 4.0;
    spec.seed = a.seed;
    const TrackWindow win = make_window(synthesize_scene(spec).stream.frames, 0, 5);
    const Raster img = test_pattern(w, h);
    auto median = [&](auto&& fn) {
      std::vector<double> t;
      for (int i = 0; i < a.repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      std::sort(t.begin(), t.end());
      return t[t.size() / 2];
    };
    WindowDisplacements d;
    const double infer = median([&] { d = solve_network(win, 0.3, weights, {}, false).displacements; });
    const NodePair np{*win.frames[1].q, *win.frames[1].q + d[0]};
    const double grid = median([&] { (void)warp_grid(build_grid(w, h, gc, gr), np.swapped()); });
    const double warp = median([&] { (void)resample_frame(img, np, gc, gr); });
    auto out = open_out(a.latency_out);
    out << "channels,window,inference_ms,grid_ms,warp_ms,total_ms\n"
        << a.channels << ",5," << infer << ',' << grid << ',' << warp << ',' << infer + warp << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
  std::string input, outputs, out;
  std::size_t nodes = kDefaultPointCount;
  std::uint64_t seed = 1;
  double alpha = 0.3;
};

int run_metrics(const MetricsArgs& a) {
  LoadOptions lo;
  lo.point_count = a.nodes;
  lo.seed = a.seed;
  auto in = open_in(a.input);
  const TrackStream stream = load_tracks(in, lo);
  std::vector<NodePair> nodes(stream.frames.size());
  if (!a.outputs.empty()) {
    auto oin = open_in(a.outputs);
    const auto recs = load_outputs(oin, stream.scale_x(), stream.scale_y());
    std::map<std::size_t, std::size_t> pos;
    for (std::size_t k = 0; k < stream.frames.size(); ++k) pos[stream.frames[k].frame_index] = k;
    for (const auto& r : recs) {
      auto it = pos.find(r.frame_index);
      if (it == pos.end()) throw DataError("output frame " + std::to_string(r.frame_index) + " is not in the input");
      nodes[it->second] = r.nodes;
    }
  }
  MlsConfig cfg;
  cfg.alpha = a.alpha;
  const MetricReport m = evaluate_metrics(stream.frames, nodes, cfg, &std::cerr);
  if (a.out.empty()) {
    write_metrics_csv(std::cout, m);
  } else {
    auto out = open_out(a.out);
    write_metrics_csv(out, m);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Track-based selfie video stabilization"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic shaky track stream and its jitter log");
  synth->add_option("-o,--out", sa.out, "Track JSONL output")->required();
  synth->add_option("--log", sa.log, "Jitter log CSV output");
  synth->add_option("--frames", sa.frames, "Frame count")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--points", sa.points, "Correspondences per frame")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--jitter", sa.jitter, "Camera translation std (px)")->capture_default_str();
  synth->add_option("--rotation", sa.rotation, "Camera rotation std (deg)")->capture_default_str();
  synth->add_option("--face-jitter", sa.face_jitter, "Face translation std (px)")->capture_default_str();
  synth->add_option("--face-rotation", sa.face_rotation, "Face rotation std (deg)")->capture_default_str();
  synth->add_option("--drift-x", sa.drift_x, "Intentional pan (px/frame)")->capture_default_str();
  synth->add_option("--drift-y", sa.drift_y, "Intentional pan (px/frame)")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Correspondence noise std (px)")->capture_default_str();
  synth->add_option("--size", sa.size, "Source resolution WxH")->capture_default_str();

  StabilizeArgs st;
  auto* stab = app.add_subcommand("stabilize", "Stabilize a track stream with the sliding-window pipeline");
  stab->add_option("-i,--input", st.input, "Track JSONL input")->required();
  stab->add_option("-o,--output", st.output, "Per-frame node JSONL output")->required();
  stab->add_option("--solver", st.solver, "Window solver")->capture_default_str()->check(CLI::IsMember({"direct", "net"}));
  stab->add_option("--weights", st.weights, "Network weight file (net solver)");
  stab->add_option("--lambda", st.lambda, "Foreground weight")->capture_default_str()->check(kOpenUnit);
  stab->add_option("--lambda-schedule", st.schedule, "CSV frame,lambda (held between entries)");
  stab->add_option("--window", st.window, "Window length T")->capture_default_str()->check(CLI::Range(3, 1000));
  stab->add_option("--nodes", st.nodes, "Warp nodes per frame")->capture_default_str()->check(CLI::PositiveNumber);
  stab->add_option("--grid", st.grid, "Warp grid cells WxH")->capture_default_str();
  stab->add_option("--alpha", st.alpha, "MLS weight exponent")->capture_default_str()->check(CLI::PositiveNumber);
  stab->add_option("--iters", st.iters, "Direct solver iterations")->capture_default_str();
  stab->add_option("--lr", st.lr, "Direct solver learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  stab->add_option("--seed", st.seed, "Point resampling seed")->capture_default_str();
  stab->add_option("--frames-in", st.frames_in, "Directory of input PPM/PGM frames");
  stab->add_option("--frames-out", st.frames_out, "Directory for warped frames");
  stab->add_option("--frame-pattern", st.pattern, "Frame file name pattern")->capture_default_str();
  stab->add_flag("--timing", st.timing, "Record wall-clock times in the output (not reproducible)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train the stabilization network");
  tr->add_option("-o,--output", ta.output, "Weight file output")->required();
  tr->add_option("--curve", ta.curve, "Loss curve CSV output");
  tr->add_option("-i,--input", ta.inputs, "Track JSONL files (default: synthetic windows)");
  tr->add_option("--synthetic", ta.synthetic, "Synthetic window count")->capture_default_str();
  tr->add_option("--init", ta.init, "Start from this weight file");
  tr->add_option("--channels", ta.channels, "Base channel count C")->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--epochs", ta.epochs, "Epochs")->capture_default_str();
  tr->add_option("--window", ta.window, "Window length T")->capture_default_str()->check(CLI::Range(3, 1000));
  tr->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--seed", ta.seed, "Random seed")->capture_default_str();
  tr->add_flag("--no-augment", ta.no_augment, "Disable affine augmentation");
  tr->add_flag("--no-permute", ta.no_permute, "Keep point order");
  tr->add_flag("-q,--quiet", ta.quiet, "No per-epoch progress");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time grid warping against dense MLS");
  bench->add_option("-o,--out", ba.out, "Timing CSV output (default stdout)");
  bench->add_option("--nodes", ba.nodes, "Warp nodes")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--raster", ba.raster, "Raster size WxH")->capture_default_str();
  bench->add_option("--grid", ba.grid, "Grid cells WxH")->capture_default_str();
  bench->add_option("--repeats", ba.repeats, "Grid timing repeats")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--dense-repeats", ba.dense_repeats, "Dense timing repeats")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench->add_option("--seed", ba.seed, "Node field seed")->capture_default_str();
  bench->add_option("--latency-out", ba.latency_out, "Also time the network path and write this CSV");
  bench->add_option("--channels", ba.channels, "Network C for --latency-out")->capture_default_str()->check(CLI::PositiveNumber);

  MetricsArgs ma;
  auto* met = app.add_subcommand("metrics", "Cropping, distortion and stability of a stabilized stream");
  met->add_option("-i,--input", ma.input, "Track JSONL input")->required();
  met->add_option("--outputs", ma.outputs, "Node JSONL from stabilize (default: identity)");
  met->add_option("-o,--out", ma.out, "Metric CSV output (default stdout)");
  met->add_option("--nodes", ma.nodes, "Warp nodes per frame")->capture_default_str()->check(CLI::PositiveNumber);
  met->add_option("--seed", ma.seed, "Point resampling seed")->capture_default_str();
  met->add_option("--alpha", ma.alpha, "MLS weight exponent")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return run_synth(sa);
    if (stab->parsed()) return run_stabilize(st);
    if (tr->parsed()) return run_train(ta);
    if (bench->parsed()) return run_bench(ba);
    if (met->parsed()) return run_metrics(ma);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
