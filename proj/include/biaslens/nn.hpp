#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "biaslens/autodiff.hpp"
#include "biaslens/rng.hpp"

namespace biaslens {

/// A named pointer into a model's parameter storage.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
};

/// y = x W + b with W stored as (in x out).
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear zeros(std::size_t in, std::size_t out);
  /// Weights ~ N(0, gain^2 / in), zero bias.
  static Linear random(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }

  Value forward(Graph& g, const Value& x) const;
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

}  // namespace biaslens
