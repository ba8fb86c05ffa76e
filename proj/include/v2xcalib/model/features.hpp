#pragma once

// Residual convolutional encoder. Stride-2 stem and stages run down to 1/16;
// the 1/16 map is upsampled and added to the 1/8 map after 1x1 lateral
// projections, then projected to the output width. Output is at 1/8.

#include "v2xcalib/nn/layers.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace v2xcalib::model {

using nn::Conv2d;
using nn::InitRng;
using nn::NamedParams;
using nn::Tensor;
using nn::Var;

struct EncoderConfig {
  int in_channels = 1;
  std::array<int, 4> widths{32, 48, 64, 96};  // 1/2, 1/4, 1/8, 1/16
  int blocks_per_stage = 2;
  int fpn_width = 64;
  int out_channels = 64;
};

template <typename S>
struct ResidualBlock {
  Conv2d<S> conv1, conv2, shortcut;

  ResidualBlock() = default;
  ResidualBlock(int in, int out, int stride, InitRng& rng)
      : conv1(in, out, 3, stride, rng, true, S(std::sqrt(2.0))), conv2(out, out, 3, 1, rng, true, S(0.5)) {
    if (in != out || stride != 1) shortcut = Conv2d<S>(in, out, 1, stride, rng, false);
  }

  Var<S> operator()(const Var<S>& x) const {
    const Var<S> y = conv2(nn::relu(conv1(x)));
    return nn::relu(y + (shortcut.weight.defined() ? shortcut(x) : x));
  }

  void collect(NamedParams<S>& out, const std::string& p) const {
    conv1.collect(out, p + ".conv1");
    conv2.collect(out, p + ".conv2");
    if (shortcut.weight.defined()) shortcut.collect(out, p + ".shortcut");
  }
};

template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, InitRng& rng) : cfg_(cfg) {
    const auto& w = cfg.widths;
    stem_ = Conv2d<S>(cfg.in_channels, w[0], 3, 2, rng, true, S(std::sqrt(2.0)));
    for (int s = 0; s < 4; ++s) {
      const int in = s == 0 ? w[0] : w[s - 1];
      for (int b = 0; b < cfg.blocks_per_stage; ++b) {
        stages_[s].emplace_back(b == 0 ? in : w[s], w[s], (b == 0 && s > 0) ? 2 : 1, rng);
      }
    }
    lateral8_ = Conv2d<S>(w[2], cfg.fpn_width, 1, 1, rng);
    lateral16_ = Conv2d<S>(w[3], cfg.fpn_width, 1, 1, rng);
    proj_ = Conv2d<S>(cfg.fpn_width, cfg.out_channels, 1, 1, rng);
  }

  /// x [N, C, H, W] with H, W divisible by 8 -> [N, out, H/8, W/8].
  Var<S> operator()(const Var<S>& x) const {
    if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels) {
      throw nn::ShapeError("encoder: expected [N, " + std::to_string(cfg_.in_channels) + ", H, W], got " +
                           nn::shape_str(x.shape()));
    }
    if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
      throw nn::ShapeError("encoder: spatial size " + nn::shape_str(x.shape()) + " must be divisible by 8");
    }
    Var<S> y = nn::relu(stem_(x));
    Var<S> at8;
    for (int s = 0; s < 4; ++s) {
      for (const auto& b : stages_[s]) y = b(y);
      if (s == 2) at8 = y;
    }
    const Var<S> up = nn::resize_bilinear(lateral16_(y), at8.dim(2), at8.dim(3));
    return proj_(lateral8_(at8) + up);
  }

  void collect(NamedParams<S>& out, const std::string& p) const {
    stem_.collect(out, p + ".stem");
    for (int s = 0; s < 4; ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].collect(out, p + ".stage" + std::to_string(s + 1) + "." + std::to_string(b));
    lateral8_.collect(out, p + ".lateral8");
    lateral16_.collect(out, p + ".lateral16");
    proj_.collect(out, p + ".proj");
  }

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Conv2d<S> stem_;
  std::array<std::vector<ResidualBlock<S>>, 4> stages_;
  Conv2d<S> lateral8_, lateral16_, proj_;
};

/// Context split: the first `hidden` channels through tanh give the initial
/// GRU state, the rest through relu are injected at every step.
template <typename S>
std::pair<Var<S>, Var<S>> split_context(const Var<S>& ctx, int hidden) {
  return {nn::tanh(nn::slice(ctx, 1, 0, hidden)), nn::relu(nn::slice(ctx, 1, hidden, ctx.dim(1) - hidden))};
}

}  // namespace v2xcalib::model
