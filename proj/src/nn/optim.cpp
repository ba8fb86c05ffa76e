#include "v2xcalib/nn/optim.hpp"

#include <cmath>

namespace v2xcalib::nn {

Adam::Adam(std::vector<Var<float>> params, Options opt) : params_(std::move(params)), opt_(opt) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor<float>::zeros(p.shape()));
    v_.push_back(Tensor<float>::zeros(p.shape()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Adam::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    sq += p.grad().array().template cast<double>().square().sum();
  }
  return std::sqrt(sq);
}

double Adam::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-12));
    for (auto& p : params_) {
      if (p.has_grad()) p.mutable_grad().array() *= s;
    }
  }
  return norm;
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(opt_.beta1);
  const float b2 = static_cast<float>(opt_.beta2);
  const float step = static_cast<float>(lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(opt_.eps);
  const float wd = static_cast<float>(opt_.weight_decay);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<float>& p = params_[i];
    if (!p.has_grad() || !p.requires_grad()) continue;
    auto g = p.grad().array();
    auto w = p.mutable_value().array();
    auto m = m_[i].array();
    auto v = v_[i].array();
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    w -= step * m / ((v * inv_bc2).sqrt() + eps);
    if (wd > 0.0f) w -= static_cast<float>(lr) * wd * w;
  }
}

double StepDecay::at(int epoch) const {
  if (every <= 0) return initial;
  return initial * std::pow(factor, static_cast<double>(epoch / every));
}

}  // namespace v2xcalib::nn
