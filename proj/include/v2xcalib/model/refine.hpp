#pragma once

// Recurrent refinement: motion features from the correlation lookup and the
// current flow feed a convolutional GRU; a small conv head turns the hidden
// state into a flow residual. QuatHead regresses a unit quaternion.

#include "v2xcalib/model/corrvol.hpp"
#include "v2xcalib/nn/layers.hpp"

#include <stdexcept>

namespace v2xcalib::model {

using nn::Conv2d;
using nn::InitRng;
using nn::Linear;
using nn::NamedParams;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RefineConfig {
  int levels = 4;
  int radius = 4;
  int hidden = 96;       // GRU state channels
  int context = 96;      // injected context channels
  int corr_feat = 96;    // 1x1 projection of looked-up correlations
  int flow_feat1 = 64;
  int flow_feat2 = 32;
  int motion = 80;       // motion feature channels, including the 2 raw flow channels
  int flow_hidden = 128;
};

template <typename S>
struct MotionEncoder {
  Conv2d<S> convc, convf1, convf2, conv;

  MotionEncoder() = default;
  MotionEncoder(const RefineConfig& c, InitRng& rng)
      : convc(lookup_channels(c.levels, c.radius), c.corr_feat, 1, 1, rng, true, S(std::sqrt(2.0))),
        convf1(2, c.flow_feat1, 3, 1, rng, true, S(std::sqrt(2.0))),
        convf2(c.flow_feat1, c.flow_feat2, 3, 1, rng, true, S(std::sqrt(2.0))),
        conv(c.corr_feat + c.flow_feat2, c.motion - 2, 3, 1, rng, true, S(std::sqrt(2.0))) {}

  Var<S> operator()(const Var<S>& corr, const Var<S>& flow) const {
    const Var<S> c = nn::relu(convc(corr));
    const Var<S> f = nn::relu(convf2(nn::relu(convf1(flow))));
    return nn::concat<S>({nn::relu(conv(nn::concat<S>({c, f}, 1))), flow}, 1);
  }

  void collect(NamedParams<S>& out, const std::string& p) const {
    convc.collect(out, p + ".convc");
    convf1.collect(out, p + ".convf1");
    convf2.collect(out, p + ".convf2");
    conv.collect(out, p + ".conv");
  }
};

/// 3x3 convolutional GRU: z and r gates, candidate from r * h.
template <typename S>
struct ConvGRU {
  Conv2d<S> convz, convr, convq;

  ConvGRU() = default;
  ConvGRU(int hidden, int input, InitRng& rng)
      : convz(hidden + input, hidden, 3, 1, rng), convr(hidden + input, hidden, 3, 1, rng),
        convq(hidden + input, hidden, 3, 1, rng) {}

  Var<S> operator()(const Var<S>& h, const Var<S>& x) const {
    const Var<S> hx = nn::concat<S>({h, x}, 1);
    const Var<S> z = nn::sigmoid(convz(hx));
    const Var<S> r = nn::sigmoid(convr(hx));
    const Var<S> q = nn::tanh(convq(nn::concat<S>({r * h, x}, 1)));
    return h + z * (q - h);
  }

  void collect(NamedParams<S>& out, const std::string& p) const {
    convz.collect(out, p + ".convz");
    convr.collect(out, p + ".convr");
    convq.collect(out, p + ".convq");
  }
};

template <typename S>
struct FlowHead {
  Conv2d<S> conv1, conv2;

  FlowHead() = default;
  FlowHead(int hidden, int mid, InitRng& rng)
      : conv1(hidden, mid, 3, 1, rng, true, S(std::sqrt(2.0))), conv2(mid, 2, 3, 1, rng, true, S(0.1)) {}

  Var<S> operator()(const Var<S>& h) const { return conv2(nn::relu(conv1(h))); }

  void collect(NamedParams<S>& out, const std::string& p) const {
    conv1.collect(out, p + ".conv1");
    conv2.collect(out, p + ".conv2");
  }
};

template <typename S>
struct UpdateBlock {
  MotionEncoder<S> encoder;
  ConvGRU<S> gru;
  FlowHead<S> head;

  UpdateBlock() = default;
  UpdateBlock(const RefineConfig& c, InitRng& rng)
      : encoder(c, rng), gru(c.hidden, c.motion + c.context, rng), head(c.hidden, c.flow_hidden, rng) {}

  /// One step: returns the new hidden state and the flow residual df.
  std::pair<Var<S>, Var<S>> operator()(const Var<S>& h, const Var<S>& context, const Var<S>& corr,
                                       const Var<S>& flow) const {
    const Var<S> motion = encoder(corr, flow);
    const Var<S> h2 = gru(h, nn::concat<S>({motion, context}, 1));
    return {h2, head(h2)};
  }

  void collect(NamedParams<S>& out, const std::string& p) const {
    encoder.collect(out, p + ".motion");
    gru.collect(out, p + ".gru");
    head.collect(out, p + ".flow");
  }
};

/// q [N, 4] -> q / |q| per row. A row with vanishing norm means a dead head.
template <typename S>
Var<S> normalize_quaternion(const Var<S>& q) {
  const Var<S> n = nn::row_norm(q);
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!(n.value()[i] > S(1e-12))) throw NumericError("quaternion head produced a zero or non-finite vector");
  }
  return q / nn::reshape(n, {q.dim(0), 1});
}

/// FC -> relu -> FC -> 4 -> normalize. The last bias starts at the identity
/// rotation (1, 0, 0, 0) with small weights, so an untrained head predicts
/// no correction.
template <typename S>
struct QuatHead {
  Linear<S> fc1, fc2;

  QuatHead() = default;
  QuatHead(int in, int hidden, InitRng& rng) : fc1(in, hidden, rng, true, S(std::sqrt(2.0))), fc2(hidden, 4, rng, true, S(0.1)) {
    fc2.bias.mutable_value()[0] = S(1);
  }

  /// x [N, in] -> [N, 4] unit quaternions (w, x, y, z).
  Var<S> operator()(const Var<S>& x) const { return normalize_quaternion(fc2(nn::relu(fc1(x)))); }

  void collect(NamedParams<S>& out, const std::string& p) const {
    fc1.collect(out, p + ".fc1");
    fc2.collect(out, p + ".fc2");
  }
};

}  // namespace v2xcalib::model
