#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "biaslens/nn.hpp"

namespace biaslens {

struct FlowConfig {
  std::size_t dim = 16;
  std::size_t num_labels = 3;
  std::size_t embed_dim = 8;
  std::size_t num_blocks = 8;
  std::size_t hidden = 64;
  double clamp = 2.0;

  void validate() const;
};

/// Per-dimension affine layer h = (x + bias) * exp(log_scale).
struct ActNorm {
  Tensor log_scale;  // 1 x d
  Tensor bias;       // 1 x d
  bool initialized = false;
};

/// Transforms the active columns by exp(s) and t computed from the passive
/// columns and the dataset embedding; s is soft-clamped to (-clamp, clamp).
struct AffineCoupling {
  std::size_t passive_begin = 0, passive_end = 0;
  std::size_t active_begin = 0, active_end = 0;
  Linear hidden;
  Linear out;  // hidden -> 2 * active width: [s_raw | t]

  std::size_t passive_width() const { return passive_end - passive_begin; }
  std::size_t active_width() const { return active_end - active_begin; }
  bool passive_first() const { return passive_begin == 0; }
};

/// actnorm -> coupling -> fixed permutation. After the permutation, output
/// column j holds input column permutation[j].
struct FlowBlock {
  ActNorm actnorm;
  AffineCoupling coupling;
  std::vector<std::size_t> permutation;
};

/// Per-label output map z' = (z - shift) * matrix. Its log|det| is a
/// per-label constant.
struct OutputAffine {
  Tensor shift;    // 1 x d
  Tensor matrix;   // d x d, invertible
  Tensor inverse;  // d x d, derived from matrix
  double logdet = 0.0;
};

/// Conditional invertible network: z = forward(x | y), x = inverse(z | y).
class FlowModel {
 public:
  struct Output {
    Value z;
    Value logdet;  // N x 1
  };

  FlowModel() = default;
  /// Random conditioner hidden layers and embeddings, zero-initialized
  /// conditioner outputs (each coupling starts as the identity), seeded
  /// permutations, actnorm awaiting data initialization.
  FlowModel(const FlowConfig& config, Rng& rng);
  /// Unit actnorm (marked initialized), zero conditioners and embeddings,
  /// identity permutations: z = x and logdet = 0.
  static FlowModel identity(const FlowConfig& config);

  const FlowConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t num_labels() const { return config_.num_labels; }
  bool initialized() const;

  Output forward(Graph& g, const Value& x, std::span<const int> labels) const;
  /// Mean negative log-likelihood of the batch under the standard normal prior.
  Value nll(Graph& g, const Value& x, std::span<const int> labels) const;

  /// Returns (z, logdet) with logdet as N x 1.
  std::pair<Tensor, Tensor> forward(const Tensor& x, std::span<const int> labels) const;
  Tensor inverse(const Tensor& z, std::span<const int> labels) const;
  /// log p(x | y) per row, N x 1.
  Tensor log_prob(const Tensor& x, std::span<const int> labels) const;

  /// Sets every actnorm so the batch leaving it has zero mean and unit
  /// variance per dimension. Only valid once, on an uninitialized model.
  void actnorm_data_init(const Tensor& x, std::span<const int> labels);

  /// Sets the output map of `label`. Throws UsageError if `matrix` is
  /// numerically singular.
  void set_output_affine(int label, Tensor shift, Tensor matrix);
  const OutputAffine& output_affine(int label) const;
  /// Maximum-likelihood fit of every label's output map with the blocks held
  /// fixed: symmetric whitening, matrix = Cov^(-1/2), of that label's codes.
  /// Among all whitening maps this one moves the codes least, which keeps
  /// projections between labels content-preserving. Each label needs more
  /// than dim rows.
  void fit_output_affine(const Tensor& x, std::span<const int> labels);
  void reset_output_affine();

  std::vector<FlowBlock>& blocks() { return blocks_; }
  const std::vector<FlowBlock>& blocks() const { return blocks_; }
  Tensor& embedding() { return embedding_; }
  const Tensor& embedding() const { return embedding_; }

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  /// Output-map shifts and matrices. They are not trained by gradient.
  std::vector<ConstParamRef> buffers() const;

  /// Builds the block structure for a config without touching parameter
  /// values (used when loading checkpoints).
  static FlowModel skeleton(const FlowConfig& config);

 private:
  void check_ready(std::span<const int> labels, std::size_t rows) const;
  Value embed(Graph& g, std::span<const int> labels) const;
  std::pair<Value, Value> conditioner(Graph& g, const FlowBlock& block, const Value& passive,
                                      const Value& emb) const;
  Output block_forward(Graph& g, const FlowBlock& block, const Value& x, const Value& emb) const;
  bool output_is_identity() const;
  Output output_forward(Graph& g, const Value& z, std::span<const int> labels) const;

  FlowConfig config_;
  Tensor embedding_;  // num_labels x embed_dim
  std::vector<FlowBlock> blocks_;
  std::vector<OutputAffine> output_;  // one per label
};

/// Permutation matrix P with (x P)[:, j] = x[:, perm[j]].
Tensor permutation_matrix(std::span<const std::size_t> perm);
bool is_permutation(std::span<const std::size_t> perm);

}  // namespace biaslens
