#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sstab/autodiff.hpp"
#include "sstab/error.hpp"
#include "sstab/objective.hpp"
#include "sstab/tracks.hpp"

namespace sstab {

enum class LayerKind : std::uint32_t { conv = 0, conv_transposed = 1 };
enum class Branch : std::uint32_t { feature = 0, face = 1, decoder = 2 };

struct LayerSpec {
  int id = 0;  // 1..18
  Branch branch = Branch::feature;
  LayerKind kind = LayerKind::conv;
  Eigen::Index c_in = 0, c_out = 0;
  Eigen::Index l_in = 0, l_out = 0;
  ConvSpec conv;

  // conv: C_out x (C_in k); transposed: C_in x (C_out k)
  Eigen::Index weight_rows() const { return kind == LayerKind::conv ? c_out : c_in; }
  Eigen::Index weight_cols() const { return (kind == LayerKind::conv ? c_in : c_out) * conv.kernel; }
  Eigen::Index parameter_count() const { return weight_rows() * weight_cols(); }
};

inline constexpr Eigen::Index kNetPoints = 512;

// Layer table for base width C and window length T. Layer 11 uses
// dilation 1 / padding 1 so its output length is 128.
inline std::vector<LayerSpec> network_layers(Eigen::Index c, std::size_t t, Eigen::Index points = kNetPoints) {
  if (c < 1) throw ParameterError("network width C must be positive");
  if (t < 3) throw ParameterError("network window length must be at least 3");
  if (points % 8 != 0) throw ParameterError("network point count must be a multiple of 8");
  const auto tt = static_cast<Eigen::Index>(t);
  const Eigen::Index n = points;
  struct Row {
    int id;
    LayerKind kind;
    Eigen::Index c_in, c_out, l_in, k, s, d, p;
  };
  const std::array<Row, 10> enc = {{{1, LayerKind::conv, 4 * (tt - 1), c, n, 3, 1, 1, 1},
                                    {2, LayerKind::conv, c, 2 * c, n, 4, 2, 1, 1},
                                    {3, LayerKind::conv, 2 * c, 2 * c, n / 2, 3, 1, 1, 1},
                                    {4, LayerKind::conv, 2 * c, 4 * c, n / 2, 4, 2, 1, 1},
                                    {5, LayerKind::conv, 4 * c, 4 * c, n / 4, 3, 1, 1, 1},
                                    {6, LayerKind::conv, 4 * c, 4 * c, n / 4, 3, 1, 1, 1},
                                    {7, LayerKind::conv, 4 * c, 8 * c, n / 4, 4, 2, 1, 1},
                                    {8, LayerKind::conv, 8 * c, 8 * c, n / 8, 3, 1, 1, 1},
                                    {9, LayerKind::conv, 8 * c, 8 * c, n / 8, 3, 1, 2, 2},
                                    {10, LayerKind::conv, 8 * c, 8 * c, n / 8, 3, 1, 2, 2}}};
  const std::array<Row, 8> dec = {{{11, LayerKind::conv_transposed, 32 * c, 8 * c, n / 8, 4, 2, 1, 1},
                                   {12, LayerKind::conv, 8 * c, 8 * c, n / 4, 3, 1, 1, 1},
                                   {13, LayerKind::conv, 8 * c, 8 * c, n / 4, 3, 1, 1, 1},
                                   {14, LayerKind::conv_transposed, 16 * c, 4 * c, n / 4, 4, 2, 1, 1},
                                   {15, LayerKind::conv, 4 * c, 4 * c, n / 2, 3, 1, 1, 1},
                                   {16, LayerKind::conv_transposed, 8 * c, 2 * c, n / 2, 4, 2, 1, 1},
                                   {17, LayerKind::conv, 2 * c, 2 * c, n, 3, 1, 1, 1},
                                   {18, LayerKind::conv, 2 * c, 2 * (tt - 2), n, 1, 1, 1, 0}}};
  auto make = [](const Row& r, Branch b) {
    LayerSpec s;
    s.id = r.id;
    s.branch = b;
    s.kind = r.kind;
    s.c_in = r.c_in;
    s.c_out = r.c_out;
    s.l_in = r.l_in;
    const char* tag = b == Branch::feature ? "feature" : b == Branch::face ? "face" : "decoder";
    s.conv = ConvSpec{r.k, r.s, r.d, r.p, "layer " + std::to_string(r.id) + " (" + tag + ")"};
    s.l_out = r.kind == LayerKind::conv ? s.conv.conv_length(r.l_in) : s.conv.transposed_length(r.l_in);
    return s;
  };
  std::vector<LayerSpec> out;
  for (Branch b : {Branch::feature, Branch::face})
    for (const Row& r : enc) out.push_back(make(r, b));
  for (const Row& r : dec) out.push_back(make(r, Branch::decoder));
  return out;
}

// Indices into the 28-entry parameter list.
inline constexpr std::size_t feature_layer(int id) { return static_cast<std::size_t>(id - 1); }
inline constexpr std::size_t face_layer(int id) { return static_cast<std::size_t>(9 + id); }
inline constexpr std::size_t decoder_layer(int id) { return static_cast<std::size_t>(9 + id); }

using FloatTensor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NetWeights {
  static constexpr std::uint32_t kVersion = 1;

  Eigen::Index channels = 128;
  std::size_t window = 5;
  Eigen::Index points = kNetPoints;
  std::vector<LayerSpec> layers;
  std::vector<FloatTensor> kernels;

  NetWeights() = default;
  NetWeights(Eigen::Index c, std::size_t t, Eigen::Index n = kNetPoints)
      : channels(c), window(t), points(n), layers(network_layers(c, t, n)) {
    for (const auto& l : layers) kernels.push_back(FloatTensor::Zero(l.weight_rows(), l.weight_cols()));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.parameter_count());
    return n;
  }

  std::vector<Tensor> to_double() const {
    std::vector<Tensor> out;
    for (const auto& k : kernels) out.push_back(k.cast<double>());
    return out;
  }

  void assign(const std::vector<Tensor>& values) {
    check_parameters(values);
    for (std::size_t i = 0; i < kernels.size(); ++i) kernels[i] = values[i].cast<float>();
  }

  void check_parameters(const std::vector<Tensor>& values) const {
    if (values.size() != layers.size()) throw ShapeError("expected " + std::to_string(layers.size()) + " kernels");
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (values[i].rows() != layers[i].weight_rows() || values[i].cols() != layers[i].weight_cols())
        throw ShapeError(layers[i].conv.label + ": kernel shape mismatch");
  }

  void validate() const {
    const auto want = network_layers(channels, window, points);
    if (layers.size() != want.size() || kernels.size() != want.size())
      throw ShapeError("network must have " + std::to_string(want.size()) + " layers");
    for (std::size_t i = 0; i < want.size(); ++i)
      if (kernels[i].rows() != want[i].weight_rows() || kernels[i].cols() != want[i].weight_cols())
        throw ShapeError(want[i].conv.label + ": kernel shape mismatch");
  }
};

// Zero-mean normal init with std 1/sqrt(C_in * k).
inline NetWeights init_weights(Eigen::Index c, std::size_t t, std::uint64_t seed, Eigen::Index n = kNetPoints) {
  NetWeights w(c, t, n);
  Rng rng(seed);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& l = w.layers[i];
    std::normal_distribution<double> d(0.0, 1.0 / std::sqrt(static_cast<double>(l.c_in * l.conv.kernel)));
    auto& k = w.kernels[i];
    for (Eigen::Index j = 0; j < k.size(); ++j) k.data()[j] = static_cast<float>(d(rng));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Inputs

struct NetInput {
  Tensor features;  // 4(T-1) x N, per slot [P_t ; Q_{t+1}]
  Tensor faces;     // 4(T-1) x N, per slot [F_t ; F_{t+1}]
  double lambda = 0.3;
};

// Builds the network input. When any frame lacks a face the face branch is
// zero-filled and lambda is forced to 0.
inline NetInput make_net_input(const TrackWindow& w, double lambda) {
  w.validate();
  const std::size_t t = w.length();
  const auto n = static_cast<Eigen::Index>(w.point_count());
  NetInput in;
  in.features.resize(4 * static_cast<Eigen::Index>(t - 1), n);
  in.faces = Tensor::Zero(4 * static_cast<Eigen::Index>(t - 1), n);
  const bool faces = w.all_faces_valid();
  for (std::size_t k = 0; k + 1 < t; ++k) {
    const auto r = 4 * static_cast<Eigen::Index>(k);
    in.features.middleRows(r, 2) = *w.frames[k].p;
    in.features.middleRows(r + 2, 2) = *w.frames[k + 1].q;
    if (faces) {
      in.faces.middleRows(r, 2) = *w.frames[k].face;
      in.faces.middleRows(r + 2, 2) = *w.frames[k + 1].face;
    }
  }
  in.lambda = faces ? lambda : 0.0;
  return in;
}

inline WindowDisplacements split_output(const Tensor& out) {
  WindowDisplacements d;
  for (Eigen::Index r = 0; r + 1 < out.rows(); r += 2) d.push_back(out.middleRows(r, 2));
  return d;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace detail {

inline void check_input(const NetInput& in, const std::vector<LayerSpec>& layers, std::size_t t) {
  const Eigen::Index rows = 4 * static_cast<Eigen::Index>(t - 1);
  const Eigen::Index n = layers.front().l_in;
  if (in.features.rows() != rows || in.faces.rows() != rows)
    throw ShapeError("layer 1: expected " + std::to_string(rows) + " input rows for window length " +
                     std::to_string(t));
  if (in.features.cols() != n || in.faces.cols() != n)
    throw ShapeError("layer 1: expected " + std::to_string(n) + " points");
  if (!(in.lambda >= 0.0 && in.lambda <= 1.0)) throw ParameterError("lambda must lie in [0,1]");
}

}  // namespace detail

// Generic forward over a set of primitive ops; V is either Tensor (plain
// evaluation) or Var (recorded on a tape).
template <class V, class K, class Ops>
V net_forward_generic(Ops& ops, const std::vector<LayerSpec>& layers, const std::vector<K>& k, V x, V y,
                      double lambda) {
  auto apply = [&](std::size_t i, V in) {
    const LayerSpec& l = layers[i];
    return l.kind == LayerKind::conv ? ops.conv(in, k[i], l.conv) : ops.convt(in, k[i], l.conv);
  };
  std::array<V, 11> fx, fy;
  fx[0] = x;
  fy[0] = y;
  for (int id = 1; id <= 10; ++id) {
    fx[id] = apply(feature_layer(id), fx[id - 1]);
    fy[id] = apply(face_layer(id), fy[id - 1]);
  }
  const double a = 1.0 - lambda, b = lambda;
  V d = apply(decoder_layer(11), ops.concat({ops.scale(fx[10], a), ops.scale(fy[10], b), ops.scale(fx[7], a),
                                             ops.scale(fy[7], b)}));
  d = apply(decoder_layer(12), d);
  d = apply(decoder_layer(13), d);
  d = apply(decoder_layer(14), ops.concat({d, ops.scale(fx[5], a), ops.scale(fy[5], b)}));
  d = apply(decoder_layer(15), d);
  d = apply(decoder_layer(16), ops.concat({d, ops.scale(fx[3], a), ops.scale(fy[3], b)}));
  d = apply(decoder_layer(17), d);
  return apply(decoder_layer(18), d);
}

struct PlainOps {
  Tensor conv(const Tensor& x, const Tensor& w, const ConvSpec& s) { return kernels::conv1d(x, w, s); }
  Tensor convt(const Tensor& x, const Tensor& w, const ConvSpec& s) { return kernels::conv1d_transposed(x, w, s); }
  Tensor scale(const Tensor& x, double a) { return x * a; }
  Tensor concat(const std::vector<Tensor>& parts) {
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    Tensor out(rows, parts.front().cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      out.middleRows(at, p.rows()) = p;
      at += p.rows();
    }
    return out;
  }
};

struct TapeOps {
  Tape& tape;
  Var conv(Var x, Var w, const ConvSpec& s) { return tape.conv1d(x, w, s); }
  Var convt(Var x, Var w, const ConvSpec& s) { return tape.conv1d_transposed(x, w, s); }
  Var scale(Var x, double a) { return tape.scale(x, a); }
  Var concat(const std::vector<Var>& parts) { return tape.concat_rows(parts); }
};

// Raw 2(T-2) x N output for double-precision kernels.
inline Tensor net_forward_raw(const NetInput& in, const std::vector<LayerSpec>& layers,
                              const std::vector<Tensor>& kernels, std::size_t t) {
  detail::check_input(in, layers, t);
  PlainOps ops;
  return net_forward_generic<Tensor>(ops, layers, kernels, in.features, in.faces, in.lambda);
}

inline WindowDisplacements net_forward(const NetInput& in, const NetWeights& w) {
  w.validate();
  return split_output(net_forward_raw(in, w.layers, w.to_double(), w.window));
}

// Records the forward pass on a tape; `kernels` are 28 variables.
inline Var net_forward_tape(Tape& tape, const NetInput& in, const std::vector<LayerSpec>& layers,
                            const std::vector<Var>& kernels, std::size_t t) {
  detail::check_input(in, layers, t);
  TapeOps ops{tape};
  return net_forward_generic<Var>(ops, layers, kernels, tape.constant(in.features), tape.constant(in.faces),
                                  in.lambda);
}

// ---------------------------------------------------------------------------
// Serialization: "SSTW", u32 version, manifest, little-endian float32 blob,
// FNV-1a 64 checksum over everything before it.

namespace detail {

class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

template <class T>
void put_le(std::string& buf, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& buf, float f) { put_le(buf, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* out, std::size_t n) {
    in_.read(static_cast<char*>(out), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw ChecksumError("weight file truncated");
    hash_.update(out, n);
  }
  template <class T>
  T le() {
    unsigned char b[sizeof(T)];
    bytes(b, sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<T>(v);
  }
  std::uint64_t hash() const { return hash_.value(); }

 private:
  std::istream& in_;
  Fnv1a hash_;
};

}  // namespace detail

inline constexpr std::size_t kManifestFieldsPerLayer = 10;

// Exact byte size of a serialized network.
inline std::size_t predicted_weight_file_size(Eigen::Index c, std::size_t t, Eigen::Index n = kNetPoints) {
  const auto layers = network_layers(c, t, n);
  std::size_t params = 0;
  for (const auto& l : layers) params += static_cast<std::size_t>(l.parameter_count());
  return 4 + 4 + 4 * 4 + layers.size() * kManifestFieldsPerLayer * 4 + 8 + 4 * params + 8;
}

inline void save_weights(std::ostream& os, const NetWeights& w) {
  w.validate();
  std::string buf = "SSTW";
  detail::put_le<std::uint32_t>(buf, NetWeights::kVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(w.channels));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(w.window));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(w.points));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(w.layers.size()));
  for (const auto& l : w.layers) {
    for (std::int64_t v : {std::int64_t{l.id}, static_cast<std::int64_t>(l.branch), static_cast<std::int64_t>(l.kind),
                           std::int64_t{l.c_in}, std::int64_t{l.c_out}, std::int64_t{l.l_in}, std::int64_t{l.conv.kernel},
                           std::int64_t{l.conv.stride}, std::int64_t{l.conv.dilation}, std::int64_t{l.conv.padding}})
      detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(v));
  }
  detail::put_le<std::uint64_t>(buf, w.parameter_count());
  for (const auto& k : w.kernels) {
    if constexpr (std::endian::native == std::endian::little) {
      buf.append(reinterpret_cast<const char*>(k.data()), sizeof(float) * static_cast<std::size_t>(k.size()));
    } else {
      for (Eigen::Index i = 0; i < k.size(); ++i) detail::put_f32(buf, k.data()[i]);
    }
  }
  detail::Fnv1a h;
  h.update(buf.data(), buf.size());
  detail::put_le<std::uint64_t>(buf, h.value());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error("failed to write weight file");
}

inline NetWeights load_weights(std::istream& in) {
  detail::Reader r(in);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "SSTW", 4) != 0) throw WeightFormatError("not a weight file (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != NetWeights::kVersion)
    throw VersionError("unsupported weight file version " + std::to_string(version));
  const auto c = r.le<std::uint32_t>();
  const auto t = r.le<std::uint32_t>();
  const auto n = r.le<std::uint32_t>();
  const auto count = r.le<std::uint32_t>();
  std::vector<LayerSpec> want;
  try {
    want = network_layers(c, t, n);
  } catch (const Error& e) {
    throw ManifestError(std::string("invalid manifest: ") + e.what());
  }
  if (count != want.size()) throw ManifestError("manifest layer count mismatch");
  for (const auto& l : want) {
    std::array<std::uint32_t, kManifestFieldsPerLayer> got;
    for (auto& v : got) v = r.le<std::uint32_t>();
    const std::array<std::int64_t, kManifestFieldsPerLayer> exp = {
        l.id, static_cast<std::int64_t>(l.branch), static_cast<std::int64_t>(l.kind), l.c_in, l.c_out, l.l_in,
        l.conv.kernel, l.conv.stride, l.conv.dilation, l.conv.padding};
    for (std::size_t i = 0; i < got.size(); ++i)
      if (static_cast<std::int64_t>(got[i]) != exp[i]) throw ManifestError("manifest mismatch at " + l.conv.label);
  }
  NetWeights w(c, t, n);
  if (r.le<std::uint64_t>() != w.parameter_count()) throw ManifestError("manifest parameter count mismatch");
  for (auto& k : w.kernels)
    for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = std::bit_cast<float>(r.le<std::uint32_t>());
  const std::uint64_t expect = r.hash();
  const auto stored = r.le<std::uint64_t>();
  if (stored != expect) throw ChecksumError("weight file checksum mismatch");
  return w;
}

}  // namespace sstab
