#include "biaslens/adam.hpp"

#include <cmath>

#include "biaslens/errors.hpp"

namespace biaslens {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamHyper& h) {
  if (!param.same_shape(grad)) {
    throw ShapeError("adam_step: param " + shape_string(param.shape()) + " vs grad " +
                     shape_string(grad.shape()));
  }
  if (!grad.all_finite()) throw NumericError("adam_step: non-finite gradient");
  if (state.m.numel() == 0) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i] + h.weight_decay * param[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

Adam::Adam(std::vector<ParamRef> params, AdamHyper hyper)
    : params_(std::move(params)), states_(params_.size()), hyper_(hyper) {
  if (!(hyper_.lr > 0.0)) throw UsageError("learning rate must be positive");
}

void Adam::step(std::span<const Tensor* const> grads) {
  if (grads.size() != params_.size()) throw UsageError("Adam::step: gradient count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor* p = params_[i].tensor;
    if (grads[i] != nullptr) {
      adam_step(*p, *grads[i], states_[i], hyper_);
    } else {
      adam_step(*p, Tensor(p->shape()), states_[i], hyper_);
    }
  }
}

}  // namespace biaslens
