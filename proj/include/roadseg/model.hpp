#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "roadseg/rng.hpp"
#include "roadseg/tape.hpp"

namespace roadseg {

// Network geometry. The input volume is 600 px wide by 150 px tall with 5
// channels (R, G, B, row coordinate, col coordinate), stored row-major
// [height, width, channels]. The encoder compresses width 600 -> 60 and
// height 150 -> 1, producing a left-to-right sequence of 60 column feature
// vectors of 256 features each.
inline constexpr int kInputHeight = 150;
inline constexpr int kInputWidth = 600;
inline constexpr int kInputChannels = 5;
inline constexpr int kSeqLen = 60;
inline constexpr int kFeatureDim = 256;
inline constexpr int kHiddenDim = 128;  // per GRU direction
inline constexpr int kDecoderHidden = 64;

// Conv strides/padding chosen so the spatial chain is exact:
// 150x600 -> 30x120 -> 30x120 -> 15x60 -> 1x60.
inline constexpr ops::Conv2dSpec kConv1Spec{5, 5, 3, 3};
inline constexpr ops::Conv2dSpec kConv2Spec{1, 1, 0, 0};
inline constexpr ops::Conv2dSpec kConv3Spec{2, 2, 2, 2};
inline constexpr ops::Conv2dSpec kConv4Spec{1, 1, 0, 0};

enum class CtxMode { sequence_final, per_step };

template <typename T>
struct ConvLayerParams {
  Tensor<T> kernel;  // [kh, kw, Cin, Cout]
  Tensor<T> bias;    // [Cout]
};

template <typename T>
struct EncoderParams {
  ConvLayerParams<T> conv1;  // 11x11x5x256, stride 5
  ConvLayerParams<T> conv2;  // 1x1x256x128
  ConvLayerParams<T> conv3;  // 5x5x128x256, stride 2
  ConvLayerParams<T> conv4;  // 15x1x256x256, valid
};

template <typename T>
struct GruCellParams {
  Tensor<T> Wz, Wr, Wh;  // input -> hidden, [256,128]
  Tensor<T> Uz, Ur, Uh;  // hidden -> hidden, [128,128]
  Tensor<T> bz, br, bh;  // [128]
};

template <typename T>
struct ContextProcessorParams {
  GruCellParams<T> fwd;
  GruCellParams<T> bwd;
  CtxMode mode = CtxMode::sequence_final;
};

template <typename T>
struct DecoderParams {
  Tensor<T> w1, b1;  // 256 -> 64
  Tensor<T> w2, b2;  // 64 -> k
};

template <typename T>
struct ModelParams {
  EncoderParams<T> encoder;
  ContextProcessorParams<T> lr_processor;   // left/right head, sequence_final
  ContextProcessorParams<T> top_processor;  // upper-boundary head, per_step
  DecoderParams<T> lr_decoder;              // k = 2
  DecoderParams<T> top_decoder;             // k = 1
};

// All boundary quantities are fractions in [0, 0.5]: left measured from the
// left edge, right from the right edge, top from the bottom edge.
template <typename T>
struct BoundaryPrediction {
  T left = T(0);
  T right = T(0);
  std::vector<T> top;            // 60 per-column-bin values
  std::vector<T> top_upsampled;  // 600 per-pixel-column values
};

namespace detail {

template <typename P, typename F>
void for_each_cell_param(const std::string& prefix, P& c, F& f) {
  f(prefix + ".Wz", c.Wz);
  f(prefix + ".Wr", c.Wr);
  f(prefix + ".Wh", c.Wh);
  f(prefix + ".Uz", c.Uz);
  f(prefix + ".Ur", c.Ur);
  f(prefix + ".Uh", c.Uh);
  f(prefix + ".bz", c.bz);
  f(prefix + ".br", c.br);
  f(prefix + ".bh", c.bh);
}

template <typename P, typename F>
void for_each_decoder_param(const std::string& prefix, P& d, F& f) {
  f(prefix + ".layer1.weight", d.w1);
  f(prefix + ".layer1.bias", d.b1);
  f(prefix + ".layer2.weight", d.w2);
  f(prefix + ".layer2.bias", d.b2);
}

}  // namespace detail

// Visits every trainable tensor in a fixed order; the checkpoint format, the
// optimizer state and gradient maps all rely on this order and these names.
template <typename P, typename F>
void for_each_param(P& p, F&& f) {
  f("encoder.conv1.kernel", p.encoder.conv1.kernel);
  f("encoder.conv1.bias", p.encoder.conv1.bias);
  f("encoder.conv2.kernel", p.encoder.conv2.kernel);
  f("encoder.conv2.bias", p.encoder.conv2.bias);
  f("encoder.conv3.kernel", p.encoder.conv3.kernel);
  f("encoder.conv3.bias", p.encoder.conv3.bias);
  f("encoder.conv4.kernel", p.encoder.conv4.kernel);
  f("encoder.conv4.bias", p.encoder.conv4.bias);
  detail::for_each_cell_param("lr_processor.fwd", p.lr_processor.fwd, f);
  detail::for_each_cell_param("lr_processor.bwd", p.lr_processor.bwd, f);
  detail::for_each_cell_param("top_processor.fwd", p.top_processor.fwd, f);
  detail::for_each_cell_param("top_processor.bwd", p.top_processor.bwd, f);
  detail::for_each_decoder_param("lr_decoder", p.lr_decoder, f);
  detail::for_each_decoder_param("top_decoder", p.top_decoder, f);
}

// Zero-valued parameter set with the architecture's exact tensor shapes.
template <typename T>
ModelParams<T> make_model_skeleton() {
  ModelParams<T> p;
  auto conv = [](int kh, int kw, int cin, int cout) {
    return ConvLayerParams<T>{Tensor<T>({kh, kw, cin, cout}), Tensor<T>({cout})};
  };
  p.encoder.conv1 = conv(11, 11, kInputChannels, kFeatureDim);
  p.encoder.conv2 = conv(1, 1, kFeatureDim, 128);
  p.encoder.conv3 = conv(5, 5, 128, kFeatureDim);
  p.encoder.conv4 = conv(15, 1, kFeatureDim, kFeatureDim);
  auto cell = [] {
    GruCellParams<T> c;
    c.Wz = Tensor<T>({kFeatureDim, kHiddenDim});
    c.Wr = Tensor<T>({kFeatureDim, kHiddenDim});
    c.Wh = Tensor<T>({kFeatureDim, kHiddenDim});
    c.Uz = Tensor<T>({kHiddenDim, kHiddenDim});
    c.Ur = Tensor<T>({kHiddenDim, kHiddenDim});
    c.Uh = Tensor<T>({kHiddenDim, kHiddenDim});
    c.bz = Tensor<T>({kHiddenDim});
    c.br = Tensor<T>({kHiddenDim});
    c.bh = Tensor<T>({kHiddenDim});
    return c;
  };
  p.lr_processor = {cell(), cell(), CtxMode::sequence_final};
  p.top_processor = {cell(), cell(), CtxMode::per_step};
  auto decoder = [](int k) {
    DecoderParams<T> d;
    d.w1 = Tensor<T>({kFeatureDim, kDecoderHidden});
    d.b1 = Tensor<T>({kDecoderHidden});
    d.w2 = Tensor<T>({kDecoderHidden, k});
    d.b2 = Tensor<T>({k});
    return d;
  };
  p.lr_decoder = decoder(2);
  p.top_decoder = decoder(1);
  return p;
}

// Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases.
template <typename T>
ModelParams<T> init_params(std::uint64_t seed) {
  ModelParams<T> p = make_model_skeleton<T>();
  Rng rng(seed);
  for_each_param(p, [&rng](const std::string& name, Tensor<T>& t) {
    if (name.ends_with("bias") || name.ends_with(".bz") || name.ends_with(".br") ||
        name.ends_with(".bh")) {
      return;  // biases stay zero
    }
    double fan_in = 0, fan_out = 0;
    if (t.rank() == 4) {
      const double window = static_cast<double>(t.extent(0)) * t.extent(1);
      fan_in = window * t.extent(2);
      fan_out = window * t.extent(3);
    } else {
      fan_in = t.extent(0);
      fan_out = t.extent(1);
    }
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-s, s));
  });
  return p;
}

template <typename T>
std::int64_t count_params(const ModelParams<T>& p) {
  std::int64_t n = 0;
  for_each_param(p, [&n](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

// ---- tape graph assembly ----

template <typename T>
struct ConvVals {
  Val<T> kernel, bias;
};
template <typename T>
struct GruCellVals {
  Val<T> Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh;
};
template <typename T>
struct DecoderVals {
  Val<T> w1, b1, w2, b2;
};
template <typename T>
struct ParamVals {
  ConvVals<T> conv1, conv2, conv3, conv4;
  GruCellVals<T> lr_fwd, lr_bwd, top_fwd, top_bwd;
  DecoderVals<T> lr_dec, top_dec;
};

template <typename T>
ParamVals<T> register_params(Tape<T>& tape, const ModelParams<T>& p) {
  ParamVals<T> v;
  std::map<std::string, Val<T>*> slots = {
      {"encoder.conv1.kernel", &v.conv1.kernel}, {"encoder.conv1.bias", &v.conv1.bias},
      {"encoder.conv2.kernel", &v.conv2.kernel}, {"encoder.conv2.bias", &v.conv2.bias},
      {"encoder.conv3.kernel", &v.conv3.kernel}, {"encoder.conv3.bias", &v.conv3.bias},
      {"encoder.conv4.kernel", &v.conv4.kernel}, {"encoder.conv4.bias", &v.conv4.bias},
  };
  auto cell_slots = [&slots](const std::string& prefix, GruCellVals<T>& c) {
    slots[prefix + ".Wz"] = &c.Wz;
    slots[prefix + ".Wr"] = &c.Wr;
    slots[prefix + ".Wh"] = &c.Wh;
    slots[prefix + ".Uz"] = &c.Uz;
    slots[prefix + ".Ur"] = &c.Ur;
    slots[prefix + ".Uh"] = &c.Uh;
    slots[prefix + ".bz"] = &c.bz;
    slots[prefix + ".br"] = &c.br;
    slots[prefix + ".bh"] = &c.bh;
  };
  cell_slots("lr_processor.fwd", v.lr_fwd);
  cell_slots("lr_processor.bwd", v.lr_bwd);
  cell_slots("top_processor.fwd", v.top_fwd);
  cell_slots("top_processor.bwd", v.top_bwd);
  auto dec_slots = [&slots](const std::string& prefix, DecoderVals<T>& d) {
    slots[prefix + ".layer1.weight"] = &d.w1;
    slots[prefix + ".layer1.bias"] = &d.b1;
    slots[prefix + ".layer2.weight"] = &d.w2;
    slots[prefix + ".layer2.bias"] = &d.b2;
  };
  dec_slots("lr_decoder", v.lr_dec);
  dec_slots("top_decoder", v.top_dec);
  for_each_param(p, [&tape, &slots](const std::string& name, const Tensor<T>& t) {
    *slots.at(name) = tape.param(name, t);
  });
  return v;
}

// 150x600x5 -> [60, 256]: relu after conv1-conv3, none after conv4 (the GRU
// applies its own squashing). Sequence index 0 is the leftmost image region.
template <typename T>
Val<T> build_encoder(Tape<T>& tape, Val<T> input, const ParamVals<T>& p) {
  const Tensor<T>& x = tape.value(input);
  const std::vector<int> want{kInputHeight, kInputWidth, kInputChannels};
  if (x.shape() != want) {
    throw ShapeError("encoder input must be " + shape_str(want) + ", got " +
                     shape_str(x.shape()));
  }
  auto h1 = tape.activation(tape.conv2d(input, p.conv1.kernel, p.conv1.bias, kConv1Spec),
                            ops::Act::relu);
  auto h2 = tape.activation(tape.conv2d(h1, p.conv2.kernel, p.conv2.bias, kConv2Spec),
                            ops::Act::relu);
  auto h3 = tape.activation(tape.conv2d(h2, p.conv3.kernel, p.conv3.bias, kConv3Spec),
                            ops::Act::relu);
  auto h4 = tape.conv2d(h3, p.conv4.kernel, p.conv4.bias, kConv4Spec);  // [1,60,256]
  return tape.reshape(h4, {kSeqLen, kFeatureDim});
}

// z = sig(Wz'x + Uz'h + bz); r = sig(Wr'x + Ur'h + br);
// hcand = tanh(Wh'x + Uh'(r*h) + bh); h_next = (1-z)*h + z*hcand
template <typename T>
Val<T> gru_step(Tape<T>& tape, Val<T> x, Val<T> h_prev, const GruCellVals<T>& c) {
  auto z = tape.activation(tape.add(tape.dense(x, c.Wz, c.bz), tape.linear(h_prev, c.Uz)),
                           ops::Act::sigmoid);
  auto r = tape.activation(tape.add(tape.dense(x, c.Wr, c.br), tape.linear(h_prev, c.Ur)),
                           ops::Act::sigmoid);
  auto h_cand = tape.activation(
      tape.add(tape.dense(x, c.Wh, c.bh), tape.linear(tape.mul(r, h_prev), c.Uh)),
      ops::Act::tanh);
  auto keep = tape.mul(tape.affine(z, T(-1), T(1)), h_prev);
  return tape.add(keep, tape.mul(z, h_cand));
}

template <typename T>
struct CtxVals {
  GruCellVals<T> fwd, bwd;
};

// Bi-directional GRU over the 60-step sequence; both directions start from a
// zero hidden state. per_step output row t is concat(h_fwd[t], h_bwd[t]);
// sequence_final is concat(last forward state, last backward state).
template <typename T>
Val<T> run_context_processor(Tape<T>& tape, Val<T> seq, const CtxVals<T>& p, CtxMode mode) {
  const Tensor<T>& s = tape.value(seq);
  if (s.rank() != 2 || s.extent(0) != kSeqLen || s.extent(1) != kFeatureDim) {
    throw ShapeError("context processor expects a [60,256] sequence, got " +
                     shape_str(s.shape()));
  }
  Val<T> h_f = tape.input(Tensor<T>({kHiddenDim}));
  Val<T> h_b = tape.input(Tensor<T>({kHiddenDim}));
  std::vector<Val<T>> fwd_states(kSeqLen), bwd_states(kSeqLen);
  for (int step = 0; step < kSeqLen; ++step) {
    h_f = gru_step(tape, tape.row(seq, step), h_f, p.fwd);
    fwd_states[step] = h_f;
    const int t = kSeqLen - 1 - step;
    h_b = gru_step(tape, tape.row(seq, t), h_b, p.bwd);
    bwd_states[t] = h_b;
  }
  if (mode == CtxMode::sequence_final) {
    return tape.concat(fwd_states.back(), bwd_states.front());
  }
  std::vector<Val<T>> rows(kSeqLen);
  for (int t = 0; t < kSeqLen; ++t) rows[t] = tape.concat(fwd_states[t], bwd_states[t]);
  return tape.stack_rows(rows);
}

// Two-layer decoder with relu hidden layer; 0.5*sigmoid output squashing makes
// the [0,0.5] boundary range structural.
template <typename T>
Val<T> decode(Tape<T>& tape, Val<T> ctx, const DecoderVals<T>& d) {
  auto h = tape.activation(tape.dense(ctx, d.w1, d.b1), ops::Act::relu);
  return tape.affine(tape.activation(tape.dense(h, d.w2, d.b2), ops::Act::sigmoid), T(0.5),
                     T(0));
}

template <typename T>
struct ForwardVals {
  Val<T> features;       // [60,256]
  Val<T> lr;             // [2]: (left, right)
  Val<T> top;            // [60]
  Val<T> top_upsampled;  // [600]
};

template <typename T>
ForwardVals<T> build_forward(Tape<T>& tape, Val<T> input, const ParamVals<T>& p) {
  ForwardVals<T> out;
  out.features = build_encoder(tape, input, p);
  auto lr_ctx = run_context_processor(tape, out.features, CtxVals<T>{p.lr_fwd, p.lr_bwd},
                                      CtxMode::sequence_final);
  out.lr = decode(tape, lr_ctx, p.lr_dec);
  auto top_ctx = run_context_processor(tape, out.features, CtxVals<T>{p.top_fwd, p.top_bwd},
                                       CtxMode::per_step);
  std::vector<Val<T>> cols(kSeqLen);
  for (int t = 0; t < kSeqLen; ++t) cols[t] = decode(tape, tape.row(top_ctx, t), p.top_dec);
  out.top = tape.reshape(tape.stack_rows(cols), {kSeqLen});
  out.top_upsampled = tape.upsample_linear_1d(out.top, kInputWidth);
  return out;
}

template <typename T>
BoundaryPrediction<T> read_prediction(const Tape<T>& tape, const ForwardVals<T>& f) {
  BoundaryPrediction<T> p;
  const Tensor<T>& lr = tape.value(f.lr);
  p.left = lr[0];
  p.right = lr[1];
  const Tensor<T>& top = tape.value(f.top);
  p.top.assign(top.data(), top.data() + top.numel());
  const Tensor<T>& up = tape.value(f.top_upsampled);
  p.top_upsampled.assign(up.data(), up.data() + up.numel());
  return p;
}

template <typename T>
BoundaryPrediction<T> forward(const Tensor<T>& input, const ModelParams<T>& params) {
  Tape<T> tape;
  ParamVals<T> pv = register_params(tape, params);
  ForwardVals<T> f = build_forward(tape, tape.input(input), pv);
  return read_prediction(tape, f);
}

// 600x150x5 input -> 60 column feature vectors of 256 features.
template <typename T>
Tensor<T> encode(const Tensor<T>& input, const EncoderParams<T>& enc) {
  ModelParams<T> p = make_model_skeleton<T>();
  p.encoder = enc;
  Tape<T> tape;
  ParamVals<T> pv = register_params(tape, p);
  return tape.value(build_encoder(tape, tape.input(input), pv));
}

// ---- checkpoint format ----
// magic "RSGRU1\n", u32 tensor count, then per tensor: u32 name length, name
// bytes, u32 rank, u32 extents, raw float32 little-endian values.

inline constexpr char kCheckpointMagic[7] = {'R', 'S', 'G', 'R', 'U', '1', '\n'};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) {
    throw IoError("truncated checkpoint while reading " + what);
  }
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ModelParams<T>& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint32_t count = 0;
  for_each_param(p, [&count](const std::string&, const Tensor<T>&) { ++count; });
  detail::write_u32(os, count);
  for_each_param(p, [&os](const std::string& name, const Tensor<T>& t) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) detail::write_u32(os, static_cast<std::uint32_t>(t.extent(a)));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const float v = static_cast<float>(t[i]);
      os.write(reinterpret_cast<const char*>(&v), 4);
    }
  });
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)] = {};
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("bad checkpoint magic in " + path);
  }
  const std::uint32_t count = detail::read_u32(is, "tensor count");
  std::map<std::string, Tensor<T>> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::read_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError("truncated checkpoint name in " + path);
    const std::uint32_t rank = detail::read_u32(is, "rank of " + name);
    std::vector<int> shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      shape[a] = static_cast<int>(detail::read_u32(is, "extent of " + name));
      numel *= shape[a];
    }
    std::vector<T> data(static_cast<std::size_t>(numel));
    for (std::int64_t k = 0; k < numel; ++k) {
      float v = 0;
      if (!is.read(reinterpret_cast<char*>(&v), 4)) {
        throw IoError("truncated checkpoint data for " + name + " in " + path);
      }
      data[static_cast<std::size_t>(k)] = static_cast<T>(v);
    }
    entries.emplace(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
  }
  ModelParams<T> p = make_model_skeleton<T>();
  for_each_param(p, [&entries, &path](const std::string& name, Tensor<T>& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint missing tensor " + name + ": " + path);
    if (it->second.shape() != t.shape()) {
      throw IoError("checkpoint shape mismatch for " + name + ": expected " +
                    shape_str(t.shape()) + ", found " + shape_str(it->second.shape()));
    }
    t = std::move(it->second);
    entries.erase(it);
  });
  if (!entries.empty()) {
    throw IoError("checkpoint has unknown tensor " + entries.begin()->first + ": " + path);
  }
  return p;
}

}  // namespace roadseg
