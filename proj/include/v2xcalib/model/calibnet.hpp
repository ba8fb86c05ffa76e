#pragma once

// Full network: image/context/depth encoders, correlation pyramid, recurrent
// refinement with a per-iteration stage-1 rotation head, and the temporal
// module that turns a sequence of flow maps into one rotation.

#include "v2xcalib/model/corrvol.hpp"
#include "v2xcalib/model/features.hpp"
#include "v2xcalib/model/refine.hpp"
#include "v2xcalib/model/temporal.hpp"

namespace v2xcalib::model {

struct ModelConfig {
  int image_h = 128;
  int image_w = 256;
  int in_channels = 1;
  EncoderConfig encoder;  // widths/blocks shared by the three encoders
  int feat_dim = 64;      // D
  RefineConfig refine;
  int iters = 10;
  int stage1_hidden = 128;
  TemporalConfig temporal;
  std::uint64_t init_seed = 1;

  int grid_h() const { return image_h / 8; }
  int grid_w() const { return image_w / 8; }
  void validate() const;
};

inline void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  need(image_h > 0 && image_w > 0 && image_h % 8 == 0 && image_w % 8 == 0, "image size must be divisible by 8");
  need(in_channels >= 1, "in_channels must be >= 1");
  need(feat_dim >= 1 && refine.hidden >= 1 && refine.context >= 1, "channel counts must be positive");
  need(refine.levels >= 1 && refine.radius >= 1, "levels and radius must be >= 1");
  const int div = 1 << (refine.levels - 1);
  need(grid_h() % div == 0 && grid_w() % div == 0, "feature grid not divisible by 2^(levels-1)");
  need(refine.motion > 2, "motion channels must exceed 2");
  need(iters >= 1, "iters must be >= 1");
  need(encoder.blocks_per_stage >= 1, "blocks_per_stage must be >= 1");
  patch_grid(grid_h(), grid_w(), iters, temporal.patch_h, temporal.patch_w);
  need(temporal.d_model >= 1 && temporal.blocks >= 0 && temporal.d_state >= 1 && temporal.max_frames >= 1,
       "temporal sizes must be positive");
}

template <typename S>
struct Refinement {
  std::vector<Var<S>> flows;   // per iteration, [N, 2, h, w]
  std::vector<Var<S>> deltas;  // the residual added at each iteration
};

template <typename S>
class CalibNet {
 public:
  CalibNet() = default;
  explicit CalibNet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    InitRng rng(cfg.init_seed);
    EncoderConfig e = cfg.encoder;
    e.in_channels = cfg.in_channels;
    e.out_channels = cfg.feat_dim;
    fnet_ = Encoder<S>(e, rng);
    e.out_channels = cfg.refine.hidden + cfg.refine.context;
    cnet_ = Encoder<S>(e, rng);
    e.in_channels = 1;
    e.out_channels = cfg.feat_dim;
    dnet_ = Encoder<S>(e, rng);
    update_ = UpdateBlock<S>(cfg.refine, rng);
    head1_ = QuatHead<S>(2 * cfg.grid_h() * cfg.grid_w(), cfg.stage1_hidden, rng);
    temporal_ = TemporalModule<S>(cfg.temporal, cfg.grid_h(), cfg.grid_w(), cfg.iters, rng);
  }

  /// image [N, C, H, W], depth [N, 1, H, W]. Each iteration looks up the
  /// correlation at the previous flow with gradients stopped there, so an
  /// iteration's loss trains its own residual.
  Refinement<S> refine(const Var<S>& image, const Var<S>& depth, int iters) const {
    const Var<S> f1 = fnet_(image);
    const Var<S> f2 = dnet_(depth);
    const CorrelationPyramid<S> pyr = build_pyramid(f1, f2, cfg_.refine.levels);
    auto [h, ctx] = split_context(cnet_(image), cfg_.refine.hidden);
    Var<S> flow_in = Var<S>::constant(Tensor<S>::zeros({image.dim(0), 2, f1.dim(2), f1.dim(3)}));
    Refinement<S> out;
    for (int i = 0; i < iters; ++i) {
      const Var<S> corr = lookup(pyr, flow_in, cfg_.refine.radius);
      auto [h2, df] = update_(h, ctx, corr, flow_in);
      h = h2;
      const Var<S> flow = flow_in + df;
      out.flows.push_back(flow);
      out.deltas.push_back(df);
      flow_in = Var<S>::constant(flow.value());
    }
    return out;
  }

  /// Stage-1 estimate for one flow map [N, 2, h, w] -> [N, 4].
  Var<S> stage1_quaternion(const Var<S>& flow) const {
    return head1_(nn::reshape(flow, {flow.dim(0), flow.dim(1) * flow.dim(2) * flow.dim(3)}));
  }

  /// Sequence estimate from per-iteration flows of T frames -> [1, 4].
  Var<S> temporal_quaternion(const std::vector<Var<S>>& flows) const { return temporal_(flows); }

  NamedParams<S> prefix_params() const {
    NamedParams<S> p;
    fnet_.collect(p, "fnet");
    cnet_.collect(p, "cnet");
    dnet_.collect(p, "dnet");
    update_.collect(p, "update");
    head1_.collect(p, "head1");
    return p;
  }

  NamedParams<S> temporal_params() const {
    NamedParams<S> p;
    temporal_.collect(p, "temporal");
    return p;
  }

  NamedParams<S> params() const {
    NamedParams<S> p = prefix_params();
    for (auto& kv : temporal_params()) p.push_back(kv);
    return p;
  }

  const ModelConfig& config() const { return cfg_; }
  const Encoder<S>& image_encoder() const { return fnet_; }
  const Encoder<S>& context_encoder() const { return cnet_; }
  const Encoder<S>& depth_encoder() const { return dnet_; }
  const TemporalModule<S>& temporal() const { return temporal_; }

 private:
  ModelConfig cfg_;
  Encoder<S> fnet_, cnet_, dnet_;
  UpdateBlock<S> update_;
  QuatHead<S> head1_;
  TemporalModule<S> temporal_;
};

}  // namespace v2xcalib::model
