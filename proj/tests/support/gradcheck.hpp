#pragma once

// Central finite-difference oracle for reverse-mode gradients. Test-only; it
// evaluates the function under test through its forward path alone.

#include "v2xcalib/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace v2xcalib::testing {

struct GradCheckResult {
  double max_abs_err = 0.0;
  double max_ref = 0.0;
  double rel_err = 0.0;  // max |analytic - numeric| / max(|numeric|, |analytic|)
  std::size_t checked = 0;
};

/// f maps inputs to any tensor; non-scalar outputs are contracted with a
/// fixed random weighting so every output element contributes. At most
/// `max_per_input` coordinates of each input are probed.
template <typename S>
GradCheckResult gradcheck(const std::function<nn::Var<S>(const std::vector<nn::Var<S>>&)>& f,
                          const std::vector<nn::Tensor<S>>& inputs, double eps, std::size_t max_per_input = 64,
                          std::uint64_t seed = 7, const std::vector<bool>& differentiate = {}) {
  using nn::Tensor;
  using nn::Var;
  std::mt19937_64 rng(seed);

  std::vector<Var<S>> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool diff = differentiate.empty() || differentiate[i];
    vars.emplace_back(inputs[i], diff);
  }
  Var<S> out = f(vars);
  const Tensor<S> weights = Tensor<S>::uniform(out.shape(), rng, S(0.5), S(1.5));
  auto contract = [&](const Var<S>& o) { return nn::sum(nn::mul(o, Var<S>::constant(weights))); };
  contract(out).backward();

  auto eval = [&](std::size_t which, std::size_t idx, S delta) {
    nn::NoGradGuard ng;
    std::vector<Var<S>> probe;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor<S> t = inputs[i];
      if (i == which) t[idx] += delta;
      probe.emplace_back(std::move(t), false);
    }
    return static_cast<double>(contract(f(probe)).item());
  };

  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!vars[i].requires_grad()) continue;
    const std::size_t n = inputs[i].size();
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k;
    if (n > max_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_input);
    }
    for (std::size_t k : idx) {
      const double numeric = (eval(i, k, S(eps)) - eval(i, k, S(-eps))) / (2.0 * eps);
      const double analytic = vars[i].has_grad() ? static_cast<double>(vars[i].grad()[k]) : 0.0;
      r.max_abs_err = std::max(r.max_abs_err, std::abs(numeric - analytic));
      r.max_ref = std::max({r.max_ref, std::abs(numeric), std::abs(analytic)});
      ++r.checked;
    }
  }
  r.rel_err = r.max_ref > 0.0 ? r.max_abs_err / r.max_ref : r.max_abs_err;
  return r;
}

/// Same check against a block's own parameters: each probed coordinate is
/// perturbed in place and restored.
template <typename S>
GradCheckResult param_gradcheck(const std::function<nn::Var<S>()>& f,
                                const std::vector<std::pair<std::string, nn::Var<S>>>& params, double eps,
                                std::size_t max_per_param = 6, std::uint64_t seed = 11) {
  using nn::Tensor;
  using nn::Var;
  std::mt19937_64 rng(seed);
  for (auto [name, p] : params) p.zero_grad();
  const Var<S> out = f();
  const Tensor<S> weights = Tensor<S>::uniform(out.shape(), rng, S(0.5), S(1.5));
  auto contract = [&](const Var<S>& o) { return nn::sum(nn::mul(o, Var<S>::constant(weights))); };
  contract(out).backward();

  GradCheckResult r;
  for (auto [name, p] : params) {
    const std::size_t n = p.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t k = 0; k < std::min(n, max_per_param); ++k) {
      const std::size_t idx = n <= max_per_param ? k : pick(rng);
      const S orig = p.value()[idx];
      double fp, fm;
      {
        nn::NoGradGuard ng;
        p.mutable_value()[idx] = orig + S(eps);
        fp = static_cast<double>(contract(f()).item());
        p.mutable_value()[idx] = orig - S(eps);
        fm = static_cast<double>(contract(f()).item());
        p.mutable_value()[idx] = orig;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = p.has_grad() ? static_cast<double>(p.grad()[idx]) : 0.0;
      r.max_abs_err = std::max(r.max_abs_err, std::abs(numeric - analytic));
      r.max_ref = std::max({r.max_ref, std::abs(numeric), std::abs(analytic)});
      ++r.checked;
    }
  }
  r.rel_err = r.max_ref > 0.0 ? r.max_abs_err / r.max_ref : r.max_abs_err;
  return r;
}

/// Tolerances for the two precisions.
template <typename S>
struct GradTol;
template <>
struct GradTol<float> {
  static constexpr double eps = 1e-3;
  static constexpr double rel = 1e-2;
};
template <>
struct GradTol<double> {
  static constexpr double eps = 1e-6;
  static constexpr double rel = 1e-5;
};

template <typename S>
nn::Tensor<S> random_tensor(nn::Shape shape, std::uint64_t seed, S lo = S(-1), S hi = S(1)) {
  std::mt19937_64 rng(seed);
  return nn::Tensor<S>::uniform(std::move(shape), rng, lo, hi);
}

}  // namespace v2xcalib::testing
