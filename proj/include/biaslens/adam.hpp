#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "biaslens/nn.hpp"

namespace biaslens {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 penalty folded into the gradient: g += weight_decay * param.
  double weight_decay = 0.0;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t t = 0;  // number of completed steps
};

/// One bias-corrected Adam update of a single tensor. Increments state.t.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamHyper& hyper);

/// Adam over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(std::vector<ParamRef> params, AdamHyper hyper);

  /// grads[i] belongs to params[i]; nullptr means no gradient this step (zero).
  void step(std::span<const Tensor* const> grads);
  std::size_t steps() const { return states_.empty() ? 0 : states_.front().t; }
  const std::vector<ParamRef>& params() const { return params_; }

 private:
  std::vector<ParamRef> params_;
  std::vector<AdamState> states_;
  AdamHyper hyper_;
};

}  // namespace biaslens
