#pragma once

#include "v2xcalib/nn/ops.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace v2xcalib::nn {

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Var<S>>>;

using InitRng = std::mt19937_64;

/// Uniform(-b, b) with b = sqrt(3 / fan_in): unit-variance activations for
/// unit-variance inputs.
template <typename S>
Tensor<S> fan_in_uniform(Shape shape, int fan_in, InitRng& rng, S gain = S(1)) {
  const S bound = gain * std::sqrt(S(3) / static_cast<S>(std::max(fan_in, 1)));
  return Tensor<S>::uniform(std::move(shape), rng, -bound, bound);
}

template <typename S>
struct Conv2d {
  Var<S> weight;
  Var<S> bias;
  Conv2dOptions opt;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, InitRng& rng, bool with_bias = true, S gain = S(1))
      : opt(Conv2dOptions::same(kernel, stride)) {
    weight = Var<S>::parameter(fan_in_uniform<S>({out, in, kernel, kernel}, in * kernel * kernel, rng, gain));
    if (with_bias) bias = Var<S>::parameter(Tensor<S>::zeros({out}));
  }

  /// Non-overlapping patch projection (kernel = stride = patch, no padding).
  static Conv2d patchify(int in, int out, int patch_h, int patch_w, InitRng& rng) {
    Conv2d c;
    c.weight = Var<S>::parameter(fan_in_uniform<S>({out, in, patch_h, patch_w}, in * patch_h * patch_w, rng));
    c.bias = Var<S>::parameter(Tensor<S>::zeros({out}));
    c.opt = {patch_h, patch_w, 0, 0};
    return c;
  }

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, opt); }

  void collect(NamedParams<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }

  void zero() {
    weight.mutable_value().fill(S(0));
    if (bias.defined()) bias.mutable_value().fill(S(0));
  }
};

template <typename S>
struct Linear {
  Var<S> weight;  // [in, out]
  Var<S> bias;    // [out]

  Linear() = default;
  Linear(int in, int out, InitRng& rng, bool with_bias = true, S gain = S(1)) {
    weight = Var<S>::parameter(fan_in_uniform<S>({in, out}, in, rng, gain));
    if (with_bias) bias = Var<S>::parameter(Tensor<S>::zeros({out}));
  }

  Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }

  void collect(NamedParams<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename S>
struct LayerNorm {
  Var<S> gamma;
  Var<S> beta;

  LayerNorm() = default;
  explicit LayerNorm(int dim)
      : gamma(Var<S>::parameter(Tensor<S>::ones({dim}))), beta(Var<S>::parameter(Tensor<S>::zeros({dim}))) {}

  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }

  void collect(NamedParams<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

template <typename S>
std::size_t count_params(const NamedParams<S>& ps) {
  std::size_t n = 0;
  for (const auto& [name, v] : ps) n += v.size();
  return n;
}

template <typename S>
void set_requires_grad(NamedParams<S>& ps, bool on) {
  for (auto& [name, v] : ps) v.set_requires_grad(on);
}

}  // namespace v2xcalib::nn
