#include "biaslens/autoencoder.hpp"

#include <algorithm>
#include <cmath>

#include "biaslens/errors.hpp"

namespace biaslens {

AEModel::AEModel(std::size_t latent_dim, std::size_t hidden_dim, Rng& rng)
    : latent_dim_(latent_dim), hidden_dim_(hidden_dim) {
  if (latent_dim == 0 || hidden_dim == 0) throw UsageError("autoencoder dims must be positive");
  enc_hidden_ = Linear::random(kPixelCount, hidden_dim, rng);
  enc_out_ = Linear::random(hidden_dim, latent_dim, rng);
  dec_hidden_ = Linear::random(latent_dim, hidden_dim, rng);
  dec_out_ = Linear::random(hidden_dim, kPixelCount, rng);
}

AEModel AEModel::zeros(std::size_t latent_dim, std::size_t hidden_dim) {
  AEModel m;
  m.latent_dim_ = latent_dim;
  m.hidden_dim_ = hidden_dim;
  m.enc_hidden_ = Linear::zeros(kPixelCount, hidden_dim);
  m.enc_out_ = Linear::zeros(hidden_dim, latent_dim);
  m.dec_hidden_ = Linear::zeros(latent_dim, hidden_dim);
  m.dec_out_ = Linear::zeros(hidden_dim, kPixelCount);
  return m;
}

Value AEModel::encode(Graph& g, const Value& pixels) const {
  if (pixels.shape().size() != 2 || pixels.cols() != kPixelCount) {
    throw ShapeError("encode expects N x " + std::to_string(kPixelCount) + " pixels, got " +
                     shape_string(pixels.shape()));
  }
  return enc_out_.forward(g, g.tanh(enc_hidden_.forward(g, pixels)));
}

Value AEModel::decode(Graph& g, const Value& x) const {
  if (x.shape().size() != 2 || x.cols() != latent_dim_) {
    throw ShapeError("decode expects N x " + std::to_string(latent_dim_) + ", got " +
                     shape_string(x.shape()));
  }
  const Value logits = dec_out_.forward(g, g.tanh(dec_hidden_.forward(g, x)));
  // sigmoid(u) = (1 + tanh(u / 2)) / 2
  const Value half = g.scale(g.tanh(g.scale(logits, 0.5)), 0.5);
  return g.add(half, g.constant(Tensor::full(1, kPixelCount, 0.5)));
}

Tensor AEModel::encode(const Tensor& pixels) const {
  Graph g;
  return encode(g, g.constant(pixels)).value();
}

Tensor AEModel::decode(const Tensor& x) const {
  Graph g;
  Tensor out = decode(g, g.constant(x)).value();
  // tanh saturates to exactly +-1 for large inputs; the bound is inclusive.
  for (double& p : out.data()) p = std::min(1.0, std::max(0.0, p));
  return out;
}

std::vector<ParamRef> AEModel::parameters() {
  std::vector<ParamRef> out;
  enc_hidden_.collect("ae.enc_hidden", out);
  enc_out_.collect("ae.enc_out", out);
  dec_hidden_.collect("ae.dec_hidden", out);
  dec_out_.collect("ae.dec_out", out);
  return out;
}

std::vector<ConstParamRef> AEModel::parameters() const {
  std::vector<ConstParamRef> out;
  enc_hidden_.collect("ae.enc_hidden", out);
  enc_out_.collect("ae.enc_out", out);
  dec_hidden_.collect("ae.dec_hidden", out);
  dec_out_.collect("ae.dec_out", out);
  return out;
}

Standardizer Standardizer::fit(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw NumericError("standardization needs at least two samples");
  Standardizer s{Tensor::zeros(1, d), Tensor::zeros(1, d)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
  for (std::size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - s.mean[j];
      s.stddev[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(n));
    if (!(s.stddev[j] > 1e-12)) {
      throw NumericError("representation dimension " + std::to_string(j) + " has zero variance");
    }
  }
  return s;
}

Standardizer Standardizer::identity(std::size_t d) {
  return Standardizer{Tensor::zeros(1, d), Tensor::full(1, d, 1.0)};
}

Tensor Standardizer::apply(const Tensor& x) const {
  Tensor out = x;
  const std::size_t d = mean.cols();
  if (x.cols() != d) throw ShapeError("standardize: dimension mismatch");
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - mean[i % d]) / stddev[i % d];
  return out;
}

Tensor Standardizer::invert(const Tensor& x_std) const {
  Tensor out = x_std;
  const std::size_t d = mean.cols();
  if (x_std.cols() != d) throw ShapeError("destandardize: dimension mismatch");
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] * stddev[i % d] + mean[i % d];
  return out;
}

}  // namespace biaslens
