#pragma once

#include <cstddef>
#include <vector>

#include "spatialrl/diff/tensor.hpp"

namespace spatialrl::diff {

// Scales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);
double grad_norm(const std::vector<Tensor>& params);

class Adam {
 public:
  struct State {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
  };

  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  std::vector<Tensor>& params() { return params_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  const State& state() const { return state_; }
  void restore(const State& state) { state_ = state; }

 private:
  std::vector<Tensor> params_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  State state_;
};

}  // namespace spatialrl::diff
