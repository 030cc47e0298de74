#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "biaslens/trainer.hpp"

namespace biaslens {

/// Immutable bundle of everything needed to move images between datasets.
/// All member functions are const and safe to call concurrently.
class TrainedModel {
 public:
  TrainedModel(AEModel ae, Standardizer stats, FlowModel flow, std::vector<DatasetSpec> registry);
  /// Requires the checkpoint to hold an autoencoder, stats and a flow.
  static TrainedModel from_checkpoint(const Checkpoint& ckpt);

  const AEModel& ae() const { return ae_; }
  const Standardizer& stats() const { return stats_; }
  const FlowModel& flow() const { return flow_; }
  const std::vector<DatasetSpec>& registry() const { return registry_; }
  std::size_t num_labels() const { return registry_.size(); }

  int label_of(const std::string& name_or_id) const { return find_label(registry_, name_or_id); }
  void check_label(int label) const;

 private:
  AEModel ae_;
  Standardizer stats_;
  FlowModel flow_;
  std::vector<DatasetSpec> registry_;
};

/// standardize(encode(pixels)).
Tensor encode_standardized(const TrainedModel& model, const Tensor& pixels);
/// decode(destandardize(x)).
Tensor decode_standardized(const TrainedModel& model, const Tensor& x);
/// Plain autoencoder reconstruction.
Tensor reconstruct(const TrainedModel& model, const Tensor& pixels);
/// z = flow_forward(standardize(encode(pixels)), y_src).
Tensor content_codes(const TrainedModel& model, const Tensor& pixels, std::span<const int> src);

/// Renders the content of each row under dataset tgt:
/// pixels* = decode(destandardize(flow_inverse(flow_forward(x, src), tgt))).
Tensor project(const TrainedModel& model, const Tensor& pixels, std::span<const int> src,
               std::span<const int> tgt);
Tensor project(const TrainedModel& model, const Tensor& pixels, int src, int tgt);

/// n x dim standard normal codes; row i depends only on (seed, i).
Tensor sample_codes(std::size_t n, std::size_t dim, std::uint64_t seed);
/// Decodes sample_codes(n, d, seed) under dataset `label`. The same seed gives
/// the same content codes for every label.
Tensor sample(const TrainedModel& model, int label, std::size_t n, std::uint64_t seed);

enum class RoundtripMode {
  Pixel,   // project to tgt, then project the decoded images back to src
  Latent,  // same hops in representation space, decoding only at the end
};

Tensor roundtrip(const TrainedModel& model, const Tensor& pixels, int src, int tgt,
                 RoundtripMode mode);

}  // namespace biaslens
