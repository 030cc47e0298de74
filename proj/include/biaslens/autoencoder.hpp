#pragma once

#include <cstddef>
#include <vector>

#include "biaslens/nn.hpp"
#include "biaslens/synthetic.hpp"

namespace biaslens {

/// MLP autoencoder 768 -> h -> d -> h -> 768 with tanh hidden units and a
/// sigmoid output, trained once on the union of all datasets.
class AEModel {
 public:
  AEModel() = default;
  AEModel(std::size_t latent_dim, std::size_t hidden_dim, Rng& rng);
  static AEModel zeros(std::size_t latent_dim, std::size_t hidden_dim);

  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

  Value encode(Graph& g, const Value& pixels) const;
  Value decode(Graph& g, const Value& x) const;

  /// N x 768 pixels in [0, 1] -> N x d representations.
  Tensor encode(const Tensor& pixels) const;
  /// N x d -> N x 768 pixels, always inside [0, 1].
  Tensor decode(const Tensor& x) const;

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;

 private:
  std::size_t latent_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  Linear enc_hidden_, enc_out_, dec_hidden_, dec_out_;
};

/// Per-dimension affine standardization of representations, fitted on the
/// training union.
struct Standardizer {
  Tensor mean;    // 1 x d
  Tensor stddev;  // 1 x d

  static Standardizer fit(const Tensor& x);
  static Standardizer identity(std::size_t d);
  Tensor apply(const Tensor& x) const;
  Tensor invert(const Tensor& x_std) const;
};

}  // namespace biaslens
