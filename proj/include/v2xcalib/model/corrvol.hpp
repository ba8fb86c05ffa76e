#pragma once

// All-pairs correlation between image features F1 and depth features F'.
// Level 0 holds <F1[:, i, j], F'[:, k, l]> / sqrt(D); level k average-pools
// the (k, l) axes by 2^k. Levels are stored as [N*h*w, 1, h_k, w_k] so a
// source pixel's slice is an ordinary single-channel image for grid_sample.

#include "v2xcalib/nn/ops.hpp"

#include <cmath>
#include <vector>

namespace v2xcalib::model {

using nn::Tensor;
using nn::Var;

template <typename S>
struct CorrelationPyramid {
  std::vector<Var<S>> levels;
  int batch = 0;
  int h = 0;
  int w = 0;

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.size();
    return n;
  }
};

template <typename S>
CorrelationPyramid<S> build_pyramid(const Var<S>& f1, const Var<S>& f2, int num_levels) {
  if (f1.shape() != f2.shape() || f1.ndim() != 4) {
    throw nn::ShapeError("build_pyramid: feature maps must share an [N, D, h, w] shape, got " +
                         nn::shape_str(f1.shape()) + " and " + nn::shape_str(f2.shape()));
  }
  if (num_levels < 1) throw nn::ShapeError("build_pyramid: need at least one level");
  const int N = f1.dim(0), D = f1.dim(1), h = f1.dim(2), w = f1.dim(3);
  const int div = 1 << (num_levels - 1);
  if (h % div != 0 || w % div != 0) {
    throw nn::ShapeError("build_pyramid: " + std::to_string(h) + "x" + std::to_string(w) + " grid not divisible by " +
                         std::to_string(div) + " for " + std::to_string(num_levels) + " levels");
  }
  const S inv = S(1) / std::sqrt(static_cast<S>(D));
  std::vector<Var<S>> per_item;
  for (int n = 0; n < N; ++n) {
    const Var<S> a = nn::reshape(nn::slice(f1, 0, n, 1), {D, h * w});
    const Var<S> b = nn::reshape(nn::slice(f2, 0, n, 1), {D, h * w});
    per_item.push_back(nn::matmul(nn::transpose(a), b));
  }
  CorrelationPyramid<S> pyr;
  pyr.batch = N;
  pyr.h = h;
  pyr.w = w;
  const Var<S> all = N == 1 ? per_item[0] : nn::concat(per_item, 0);
  pyr.levels.push_back(nn::reshape(all * inv, {N * h * w, 1, h, w}));
  for (int k = 1; k < num_levels; ++k) pyr.levels.push_back(nn::avg_pool2d(pyr.levels.back(), 2, 2));
  return pyr;
}

inline int lookup_channels(int num_levels, int radius) { return num_levels * (2 * radius + 1) * (2 * radius + 1); }

/// flow [N, 2, h, w] in feature-grid units, channel 0 = row displacement,
/// channel 1 = column displacement. Returns [N, L*(2r+1)^2, h, w]; channels
/// are level-major, then row-major over the (dy, dx) window.
template <typename S>
Var<S> lookup(const CorrelationPyramid<S>& pyr, const Var<S>& flow, int radius) {
  if (radius < 1) throw nn::ShapeError("lookup: radius must be >= 1");
  const int N = pyr.batch, h = pyr.h, w = pyr.w, P = N * h * w;
  if (flow.shape() != nn::Shape{N, 2, h, w}) {
    throw nn::ShapeError("lookup: flow " + nn::shape_str(flow.shape()) + " does not match pyramid grid");
  }
  const int side = 2 * radius + 1, K = side * side;

  Tensor<S> base({P, 1, 1, 2});
  for (int p = 0; p < P; ++p) {
    const int pix = p % (h * w);
    base[2 * p] = static_cast<S>(pix / w);
    base[2 * p + 1] = static_cast<S>(pix % w);
  }
  Tensor<S> offsets({1, 1, K, 2});
  for (int dy = -radius, k = 0; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx, ++k) {
      offsets[2 * k] = static_cast<S>(dy);
      offsets[2 * k + 1] = static_cast<S>(dx);
    }
  const Var<S> offs = Var<S>::constant(std::move(offsets));
  const Var<S> centre = Var<S>::constant(std::move(base)) + nn::reshape(nn::permute(flow, {0, 2, 3, 1}), {P, 1, 1, 2});

  std::vector<Var<S>> out;
  for (std::size_t k = 0; k < pyr.levels.size(); ++k) {
    const Var<S> grid = centre * (S(1) / static_cast<S>(1 << k)) + offs;
    const Var<S> sampled = nn::grid_sample(pyr.levels[k], grid);  // [P, 1, 1, K]
    out.push_back(nn::permute(nn::reshape(sampled, {N, h, w, K}), {0, 3, 1, 2}));
  }
  return out.size() == 1 ? out[0] : nn::concat(out, 1);
}

}  // namespace v2xcalib::model
