#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "network_table.hpp"
#include "sstab/network.hpp"

using namespace sstab;
using nettable::Shape;
using nettable::ShapeOps;
using nettable::layer_table;

namespace {

Tensor random_tensor(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> d(0, s);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return t;
}

NetInput random_input(std::size_t t, Eigen::Index n, std::mt19937_64& rng, double lambda = 0.3) {
  NetInput in;
  in.features = random_tensor(4 * static_cast<Eigen::Index>(t - 1), n, rng, 100.0);
  in.faces = random_tensor(4 * static_cast<Eigen::Index>(t - 1), n, rng, 100.0);
  in.lambda = lambda;
  return in;
}

Tensor stack(const WindowDisplacements& d) {
  Tensor out(2 * static_cast<Eigen::Index>(d.size()), d.front().cols());
  for (std::size_t i = 0; i < d.size(); ++i) out.middleRows(2 * static_cast<Eigen::Index>(i), 2) = d[i];
  return out;
}

double rel(const Tensor& a, const Tensor& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

using Nested = std::vector<std::vector<double>>;

Nested nested(const Tensor& t) {
  Nested n(static_cast<std::size_t>(t.rows()), std::vector<double>(static_cast<std::size_t>(t.cols())));
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) n[i][j] = t(i, j);
  return n;
}

std::vector<Nested> kernel3(const FloatTensor& w, Eigen::Index k) {
  const Eigen::Index inner = w.cols() / k;
  std::vector<Nested> out(static_cast<std::size_t>(w.rows()), Nested(static_cast<std::size_t>(inner), std::vector<double>(static_cast<std::size_t>(k))));
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < inner; ++c)
      for (Eigen::Index j = 0; j < k; ++j) out[r][c][j] = w(r, c * k + j);
  return out;
}

Nested scaled(Nested x, double a) {
  for (auto& r : x)
    for (auto& v : r) v *= a;
  return x;
}

Nested cat(std::initializer_list<Nested> parts) {
  Nested out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Layer-by-layer reference evaluation written against the layer table.
Nested reference_forward(const NetInput& in, const NetWeights& w) {
  struct P {
    int k, s, d, p;
  };
  const P enc[10] = {{3, 1, 1, 1}, {4, 2, 1, 1}, {3, 1, 1, 1}, {4, 2, 1, 1}, {3, 1, 1, 1},
                     {3, 1, 1, 1}, {4, 2, 1, 1}, {3, 1, 1, 1}, {3, 1, 2, 2}, {3, 1, 2, 2}};
  std::vector<Nested> fx(11), fy(11);
  fx[0] = nested(in.features);
  fy[0] = nested(in.faces);
  for (int i = 0; i < 10; ++i) {
    const P& p = enc[i];
    fx[i + 1] = oracle::conv1d_naive(fx[i], kernel3(w.kernels[i], p.k), p.s, p.d, p.p);
    fy[i + 1] = oracle::conv1d_naive(fy[i], kernel3(w.kernels[10 + i], p.k), p.s, p.d, p.p);
  }
  const double a = 1 - in.lambda, b = in.lambda;
  auto dec = [&](int id) -> const FloatTensor& { return w.kernels[static_cast<std::size_t>(20 + id - 11)]; };
  Nested d = cat({scaled(fx[10], a), scaled(fy[10], b), scaled(fx[7], a), scaled(fy[7], b)});
  d = oracle::conv1d_transposed_naive(d, kernel3(dec(11), 4), 2, 1, 1);
  d = oracle::conv1d_naive(d, kernel3(dec(12), 3), 1, 1, 1);
  d = oracle::conv1d_naive(d, kernel3(dec(13), 3), 1, 1, 1);
  d = oracle::conv1d_transposed_naive(cat({d, scaled(fx[5], a), scaled(fy[5], b)}), kernel3(dec(14), 4), 2, 1, 1);
  d = oracle::conv1d_naive(d, kernel3(dec(15), 3), 1, 1, 1);
  d = oracle::conv1d_transposed_naive(cat({d, scaled(fx[3], a), scaled(fy[3], b)}), kernel3(dec(16), 4), 2, 1, 1);
  d = oracle::conv1d_naive(d, kernel3(dec(17), 3), 1, 1, 1);
  return oracle::conv1d_naive(d, kernel3(dec(18), 1), 1, 1, 0);
}

}  // namespace

TEST(NetworkLayers, ParameterCountFormula) {
  for (Eigen::Index c : {4, 8, 32, 128}) {
    NetWeights w(c, 5);
    EXPECT_EQ(w.parameter_count(), static_cast<std::size_t>(3492 * c * c + 108 * c));
  }
}

TEST(NetworkLayers, ShapesMatchLayerTable) {
  for (Eigen::Index c : {4, 32, 128}) {
    const auto table = layer_table(c);
    NetWeights w(c, 5);
    std::vector<Tensor> k;
    for (const auto& l : w.layers) k.push_back(Tensor::Zero(l.weight_rows(), l.weight_cols()));
    ShapeOps ops;
    Shape out = net_forward_generic<Shape>(ops, w.layers, k, Shape{16, 512}, Shape{16, 512}, 0.3);
    EXPECT_EQ(out.c, 6);
    EXPECT_EQ(out.l, 512);
    ASSERT_EQ(ops.seen.size(), 28u);
    // Encoder layers are interleaved feature/face in evaluation order.
    for (int id = 1; id <= 18; ++id) {
      const auto& e = table[static_cast<std::size_t>(id - 1)];
      const std::size_t at = id <= 10 ? static_cast<std::size_t>(2 * (id - 1)) : static_cast<std::size_t>(20 + id - 11);
      for (std::size_t rep = 0; rep < (id <= 10 ? 2u : 1u); ++rep) {
        const auto& [in, o] = ops.seen[at + rep];
        EXPECT_EQ(in.c, e[0]) << "layer " << id << " C=" << c;
        EXPECT_EQ(in.l, e[1]) << "layer " << id;
        EXPECT_EQ(o.c, e[2]) << "layer " << id;
        EXPECT_EQ(o.l, e[3]) << "layer " << id;
      }
      const LayerSpec& l = w.layers[id <= 10 ? feature_layer(id) : decoder_layer(id)];
      EXPECT_EQ(l.c_in, e[0]);
      EXPECT_EQ(l.l_in, e[1]);
      EXPECT_EQ(l.c_out, e[2]);
      EXPECT_EQ(l.l_out, e[3]);
    }
  }
}

TEST(NetworkLayers, RealForwardShapes) {
  std::mt19937_64 rng(1);
  for (Eigen::Index c : {4, 32}) {
    NetWeights w = init_weights(c, 5, 3);
    WindowDisplacements d = net_forward(random_input(5, 512, rng), w);
    ASSERT_EQ(d.size(), 3u);
    for (const auto& x : d) {
      EXPECT_EQ(x.rows(), 2);
      EXPECT_EQ(x.cols(), 512);
    }
  }
}

TEST(NetworkForward, WrongWindowIsShapeError) {
  std::mt19937_64 rng(2);
  NetWeights w = init_weights(4, 5, 1);
  try {
    (void)net_forward(random_input(4, 512, rng), w);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(NetworkForward, ZeroWeightsGiveZeroDisplacements) {
  std::mt19937_64 rng(3);
  NetWeights w(4, 5);
  for (const auto& d : net_forward(random_input(5, 512, rng), w)) EXPECT_EQ(d, PointSet::Zero(2, 512));
}

TEST(NetworkForward, MatchesNaiveReference) {
  std::mt19937_64 rng(4);
  NetWeights w = init_weights(4, 5, 11);
  NetInput in = random_input(5, 512, rng, 0.37);
  Tensor got = stack(net_forward(in, w));
  Nested want = reference_forward(in, w);
  double err = 0, mag = 0;
  for (Eigen::Index i = 0; i < got.rows(); ++i)
    for (Eigen::Index j = 0; j < got.cols(); ++j) {
      err = std::max(err, std::abs(got(i, j) - want[i][j]));
      mag = std::max(mag, std::abs(want[i][j]));
    }
  EXPECT_LE(err, 1e-10 * std::max(1.0, mag));
}

TEST(NetworkForward, LinearInCoordinates) {
  std::mt19937_64 rng(5);
  NetWeights w = init_weights(8, 5, 12);
  NetInput x = random_input(5, 512, rng), y = random_input(5, 512, rng);
  const Tensor fx = stack(net_forward(x, w)), fy = stack(net_forward(y, w));
  NetInput x2 = x;
  x2.features *= 2.0;
  x2.faces *= 2.0;
  EXPECT_LE(rel(stack(net_forward(x2, w)), 2.0 * fx), 1e-6);
  NetInput sum = x;
  sum.features += y.features;
  sum.faces += y.faces;
  EXPECT_LE(rel(stack(net_forward(sum, w)), fx + fy), 1e-6);
}

TEST(NetworkForward, TapeMatchesPlainAndGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  NetWeights w = init_weights(4, 5, 13, 32);
  NetInput in = random_input(5, 32, rng, 0.4);
  std::vector<Tensor> params = w.to_double();
  Tensor plain = net_forward_raw(in, w.layers, params, 5);
  Tensor probe = random_tensor(plain.rows(), plain.cols(), rng);
  auto f = [&](Tape& t, const std::vector<Var>& v) {
    Var out = net_forward_tape(t, in, w.layers, v, 5);
    return t.sum(t.column_norms(t.sub(out, t.constant(probe))));
  };
  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.constant(p));
  EXPECT_LE(rel(tape.value(net_forward_tape(tape, in, w.layers, vars, 5)), plain), 1e-14);

  auto vg = value_and_grad(f, params);
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tensor o = net_forward_raw(in, w.layers, ps, 5) - probe;
    return o.colwise().norm().sum();
  };
  std::uniform_int_distribution<std::size_t> layer(0, params.size() - 1);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t li = layer(rng);
    std::uniform_int_distribution<Eigen::Index> idx(0, params[li].size() - 1);
    const Eigen::Index i = idx(rng);
    const double g = vg.grads[li].data()[i];
    if (std::abs(g) <= 1e-6) continue;
    const double h = 1e-4 * std::max(1.0, std::abs(params[li].data()[i]));
    auto p = params, m = params;
    p[li].data()[i] += h;
    m[li].data()[i] -= h;
    const double fd = (eval(p) - eval(m)) / (2 * h);
    EXPECT_LE(std::abs(fd - g) / std::abs(g), 1e-4) << "layer index " << li << " entry " << i;
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(NetInputTest, LayoutAndMissingFaces) {
  SyntheticSceneSpec spec;
  spec.frame_count = 5;
  spec.camera.translation_std = 2;
  TrackWindow win = make_window(synthesize_scene(spec).stream.frames, 0, 5);
  NetInput in = make_net_input(win, 0.3);
  EXPECT_EQ(in.features.rows(), 16);
  EXPECT_EQ(Tensor(in.features.middleRows(4, 2)), *win.frames[1].p);
  EXPECT_EQ(Tensor(in.features.middleRows(6, 2)), *win.frames[2].q);
  EXPECT_EQ(Tensor(in.faces.middleRows(8, 2)), *win.frames[2].face);
  EXPECT_EQ(Tensor(in.faces.middleRows(10, 2)), *win.frames[3].face);
  EXPECT_DOUBLE_EQ(in.lambda, 0.3);
  win.frames[2].face.reset();
  NetInput nf = make_net_input(win, 0.3);
  EXPECT_EQ(nf.faces, Tensor::Zero(16, 512));
  EXPECT_EQ(nf.lambda, 0.0);
}

TEST(WeightFile, RoundTripIsBitIdentical) {
  NetWeights w = init_weights(8, 5, 21);
  std::stringstream io;
  save_weights(io, w);
  NetWeights back = load_weights(io);
  ASSERT_EQ(back.kernels.size(), w.kernels.size());
  for (std::size_t i = 0; i < w.kernels.size(); ++i)
    EXPECT_EQ(std::memcmp(back.kernels[i].data(), w.kernels[i].data(), sizeof(float) * static_cast<std::size_t>(w.kernels[i].size())), 0);
  EXPECT_EQ(back.channels, 8);
  EXPECT_EQ(back.window, 5u);
}

TEST(WeightFile, CorruptionIsDetected) {
  NetWeights w = init_weights(4, 5, 22);
  std::stringstream io;
  save_weights(io, w);
  const std::string bytes = io.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 100));
  EXPECT_THROW((void)load_weights(truncated), ChecksumError);
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  std::stringstream fs(flipped);
  EXPECT_THROW((void)load_weights(fs), ChecksumError);
  std::string version = bytes;
  version[4] = 9;
  std::stringstream vs(version);
  EXPECT_THROW((void)load_weights(vs), VersionError);
  std::string manifest = bytes;
  manifest[4 + 4 + 16 + 4 * 4] ^= 1;  // first layer's c_out
  std::stringstream ms(manifest);
  EXPECT_THROW((void)load_weights(ms), ManifestError);
  std::stringstream magic("XXXX");
  EXPECT_THROW((void)load_weights(magic), WeightFormatError);
}

TEST(WeightFile, FullSizeFileMatchesPredictedBytes) {
  NetWeights w(128, 5);
  std::stringstream io;
  save_weights(io, w);
  const std::size_t params = 3492ull * 128 * 128 + 108 * 128;
  const std::size_t want = 4 + 4 + 16 + 28 * 40 + 8 + 4 * params + 8;
  EXPECT_EQ(predicted_weight_file_size(128, 5), want);
  EXPECT_EQ(io.str().size(), want);
}
