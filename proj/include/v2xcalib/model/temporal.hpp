#pragma once

// Temporal aggregation over a sequence of flow maps. Each frame's i flow maps
// are laid side by side along width, cut into patches and embedded; spatial
// and temporal embeddings are added and a learned summary token is put in
// front. Bidirectional selective-scan blocks mix the tokens and the summary
// token is regressed to a quaternion.

#include "v2xcalib/model/refine.hpp"
#include "v2xcalib/nn/layers.hpp"

#include <cmath>

namespace v2xcalib::model {

using nn::LayerNorm;

struct TemporalConfig {
  int patch_h = 8;
  int patch_w = 8;
  int d_model = 128;
  int blocks = 2;
  int d_state = 16;
  int expand = 2;
  int mlp_ratio = 2;
  int max_frames = 16;
  int head_hidden = 128;

  int dt_rank() const { return (d_model + 15) / 16; }
};

/// Patch grid of the per-frame map [2, h, w * iters].
struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int per_frame() const { return rows * cols; }
  int tokens(int frames) const { return 1 + frames * per_frame(); }
};

inline PatchGrid patch_grid(int h, int w, int iters, int patch_h, int patch_w) {
  if (iters < 1) throw nn::ShapeError("temporal: need at least one iteration");
  if (h % patch_h != 0 || (w * iters) % patch_w != 0) {
    throw nn::ShapeError("temporal: flow map " + std::to_string(h) + "x" + std::to_string(w * iters) +
                         " is not divisible by patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w));
  }
  return {h / patch_h, (w * iters) / patch_w};
}

/// Pre-norm residual block: bidirectional selective scan with a silu gate,
/// then a gated MLP. Both scan directions share the projections.
template <typename S>
struct MambaBlock {
  LayerNorm<S> norm1, norm2;
  Linear<S> in_proj, x_proj, dt_proj, out_proj, mlp_in, mlp_out;
  Var<S> A_log;  // [Di, S]
  Var<S> D;      // [Di]
  int d_inner = 0, d_state = 0, dt_rank = 0, mlp_hidden = 0;

  MambaBlock() = default;
  MambaBlock(const TemporalConfig& c, InitRng& rng)
      : norm1(c.d_model), norm2(c.d_model), d_inner(c.expand * c.d_model), d_state(c.d_state), dt_rank(c.dt_rank()),
        mlp_hidden(c.mlp_ratio * c.d_model) {
    in_proj = Linear<S>(c.d_model, 2 * d_inner, rng, false);
    x_proj = Linear<S>(d_inner, dt_rank + 2 * d_state, rng, false);
    dt_proj = Linear<S>(dt_rank, d_inner, rng, true);
    out_proj = Linear<S>(d_inner, c.d_model, rng, false, S(0.5));
    mlp_in = Linear<S>(c.d_model, 2 * mlp_hidden, rng, false);
    mlp_out = Linear<S>(mlp_hidden, c.d_model, rng, false, S(0.5));
    // Step sizes start log-uniform in [1e-3, 1e-1]; the bias is softplus^-1 of that.
    std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
    for (int i = 0; i < d_inner; ++i) {
      const double dt = std::exp(u(rng));
      dt_proj.bias.mutable_value()[i] = static_cast<S>(dt + std::log(-std::expm1(-dt)));
    }
    Tensor<S> a({d_inner, d_state});
    for (int i = 0; i < d_inner; ++i)
      for (int s = 0; s < d_state; ++s) a[i * d_state + s] = static_cast<S>(std::log(s + 1.0));
    A_log = Var<S>::parameter(std::move(a));
    D = Var<S>::parameter(Tensor<S>::ones({d_inner}));
  }

  /// Selective scan of u [L, Di] in both directions, summed; includes the D skip.
  Var<S> ssm(const Var<S>& u) const {
    const int L = u.dim(0);
    const Var<S> p = x_proj(u);
    const Var<S> dt = nn::slice(p, 1, 0, dt_rank);
    const Var<S> B = nn::reshape(nn::slice(p, 1, dt_rank, d_state), {L, 1, d_state});
    const Var<S> C = nn::reshape(nn::slice(p, 1, dt_rank + d_state, d_state), {L, 1, d_state});
    const Var<S> delta = nn::softplus(dt_proj(dt));                       // [L, Di]
    const Var<S> A = -nn::exp(A_log);                                      // [Di, S]
    const Var<S> dA = nn::exp(nn::reshape(delta, {L, d_inner, 1}) * A);    // [L, Di, S]
    const Var<S> dBu = nn::reshape(delta * u, {L, d_inner, 1}) * B;       // [L, Di, S]
    const Var<S> h = nn::linear_scan(dA, dBu) + nn::linear_scan(dA, dBu, true);
    return nn::sum(h * C, 2) + (u * D) * S(2);
  }

  /// x [L, d_model] -> [L, d_model].
  Var<S> operator()(const Var<S>& x) const {
    const Var<S> uz = in_proj(norm1(x));
    const Var<S> u = nn::silu(nn::slice(uz, 1, 0, d_inner));
    const Var<S> z = nn::slice(uz, 1, d_inner, d_inner);
    const Var<S> x1 = x + out_proj(ssm(u) * nn::silu(z));
    const Var<S> m = mlp_in(norm2(x1));
    return x1 + mlp_out(nn::slice(m, 1, 0, mlp_hidden) * nn::silu(nn::slice(m, 1, mlp_hidden, mlp_hidden)));
  }

  void collect(NamedParams<S>& out, const std::string& p) const {
    norm1.collect(out, p + ".norm1");
    in_proj.collect(out, p + ".in_proj");
    x_proj.collect(out, p + ".x_proj");
    dt_proj.collect(out, p + ".dt_proj");
    out.emplace_back(p + ".A_log", A_log);
    out.emplace_back(p + ".D", D);
    out_proj.collect(out, p + ".out_proj");
    norm2.collect(out, p + ".norm2");
    mlp_in.collect(out, p + ".mlp_in");
    mlp_out.collect(out, p + ".mlp_out");
  }
};

template <typename S>
class TemporalModule {
 public:
  TemporalModule() = default;
  TemporalModule(const TemporalConfig& c, int grid_h, int grid_w, int iters, InitRng& rng)
      : cfg_(c), grid_(patch_grid(grid_h, grid_w, iters, c.patch_h, c.patch_w)), h_(grid_h), w_(grid_w),
        iters_(iters) {
    embed_ = Conv2d<S>::patchify(2, c.d_model, c.patch_h, c.patch_w, rng);
    std::normal_distribution<S> n02(S(0), S(0.02));
    auto randn = [&](nn::Shape s) {
      Tensor<S> t(std::move(s));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = n02(rng);
      return Var<S>::parameter(std::move(t));
    };
    p_s_ = randn({grid_.per_frame(), c.d_model});
    p_t_ = randn({c.max_frames, c.d_model});
    z_add_ = randn({1, c.d_model});
    for (int b = 0; b < c.blocks; ++b) blocks_.emplace_back(c, rng);
    norm_ = LayerNorm<S>(c.d_model);
    head_ = QuatHead<S>(c.d_model, c.head_hidden, rng);
  }

  /// flows: per iteration, [T, 2, h, w]. Returns the token matrix [1 + T*N, d_model].
  Var<S> assemble_tokens(const std::vector<Var<S>>& flows) const {
    if (static_cast<int>(flows.size()) != iters_) {
      throw nn::ShapeError("temporal: expected " + std::to_string(iters_) + " flow maps, got " +
                           std::to_string(flows.size()));
    }
    const int T = flows[0].dim(0);
    if (T < 1 || T > cfg_.max_frames) {
      throw nn::ShapeError("temporal: frame count " + std::to_string(T) + " outside [1, " +
                           std::to_string(cfg_.max_frames) + "]");
    }
    for (const auto& f : flows) {
      if (f.shape() != nn::Shape{T, 2, h_, w_}) throw nn::ShapeError("temporal: flow map shape " + nn::shape_str(f.shape()));
    }
    const int N = grid_.per_frame(), Dm = cfg_.d_model;
    const Var<S> map = flows.size() == 1 ? flows[0] : nn::concat(flows, 3);            // [T, 2, h, w*i]
    const Var<S> patches = nn::permute(nn::reshape(embed_(map), {T, Dm, N}), {0, 2, 1});  // [T, N, Dm]
    const Var<S> pt = nn::reshape(nn::slice(p_t_, 0, 0, T), {T, 1, Dm});
    const Var<S> tokens = nn::reshape(patches + p_s_ + pt, {T * N, Dm});
    const Var<S> z = nn::concat<S>({z_add_, tokens}, 0);
    if (z.dim(0) != grid_.tokens(T)) throw nn::ShapeError("temporal: token count drifted");
    return z;
  }

  /// Post-block, normalized summary token [1, d_model].
  Var<S> summary(const std::vector<Var<S>>& flows) const {
    Var<S> z = assemble_tokens(flows);
    for (const auto& b : blocks_) z = b(z);
    return norm_(nn::slice(z, 0, 0, 1));
  }

  /// [1, 4] unit quaternion of the predicted miscalibration.
  Var<S> operator()(const std::vector<Var<S>>& flows) const { return head_(summary(flows)); }

  void collect(NamedParams<S>& out, const std::string& p) const {
    embed_.collect(out, p + ".embed");
    out.emplace_back(p + ".p_s", p_s_);
    out.emplace_back(p + ".p_t", p_t_);
    out.emplace_back(p + ".z_add", z_add_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(out, p + ".block" + std::to_string(b));
    norm_.collect(out, p + ".norm");
    head_.collect(out, p + ".head");
  }

  const PatchGrid& grid() const { return grid_; }
  const std::vector<MambaBlock<S>>& blocks() const { return blocks_; }
  std::vector<MambaBlock<S>>& blocks() { return blocks_; }
  const QuatHead<S>& head() const { return head_; }
  Conv2d<S>& embed() { return embed_; }
  Var<S>& spatial_embedding() { return p_s_; }
  Var<S>& temporal_embedding() { return p_t_; }

 private:
  TemporalConfig cfg_;
  PatchGrid grid_;
  int h_ = 0, w_ = 0, iters_ = 0;
  Conv2d<S> embed_;
  Var<S> p_s_, p_t_, z_add_;
  std::vector<MambaBlock<S>> blocks_;
  LayerNorm<S> norm_;
  QuatHead<S> head_;
};

}  // namespace v2xcalib::model
