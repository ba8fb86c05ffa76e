#pragma once

#include "v2xcalib/nn/layers.hpp"

namespace v2xcalib::nn {

/// Adaptive moment estimation over a fixed parameter list.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit Adam(std::vector<Var<float>> params) : Adam(std::move(params), Options{}) {}
  Adam(std::vector<Var<float>> params, Options opt);

  void zero_grad();

  /// Scales all gradients so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  double grad_norm() const;

  /// One update; parameters without an accumulated gradient are skipped.
  void step(double lr);

  long steps() const { return t_; }

 private:
  std::vector<Var<float>> params_;
  std::vector<Tensor<float>> m_;
  std::vector<Tensor<float>> v_;
  Options opt_;
  long t_ = 0;
};

/// lr = initial * factor^(floor(epoch / every)).
struct StepDecay {
  double initial = 3e-5;
  double factor = 0.5;
  int every = 20;

  double at(int epoch) const;
};

}  // namespace v2xcalib::nn
