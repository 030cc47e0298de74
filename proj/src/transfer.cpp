#include "biaslens/transfer.hpp"

#include "biaslens/errors.hpp"

namespace biaslens {

namespace {

void check_pixels(const Tensor& pixels) {
  if (pixels.rank() != 2 || pixels.cols() != kPixelCount) {
    throw ShapeError("expected N x " + std::to_string(kPixelCount) + " pixels, got " +
                     shape_string(pixels.shape()));
  }
  for (double p : pixels.data()) {
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("pixel values must lie in [0, 1]");
  }
}

std::vector<int> repeat(int label, std::size_t n) { return std::vector<int>(n, label); }

}  // namespace

TrainedModel::TrainedModel(AEModel ae, Standardizer stats, FlowModel flow,
                           std::vector<DatasetSpec> registry)
    : ae_(std::move(ae)), stats_(std::move(stats)), flow_(std::move(flow)), registry_(std::move(registry)) {
  validate_registry(registry_);
  if (flow_.num_labels() != registry_.size()) {
    throw UsageError("flow label count does not match the dataset registry");
  }
  if (flow_.dim() != ae_.latent_dim() || stats_.mean.cols() != ae_.latent_dim()) {
    throw UsageError("autoencoder, standardization and flow dimensions disagree");
  }
  if (!flow_.initialized()) throw UsageError("flow is not initialized");
}

TrainedModel TrainedModel::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.ae || !ckpt.stats || !ckpt.flow) {
    throw UsageError("checkpoint does not contain a trained autoencoder and flow");
  }
  return TrainedModel(*ckpt.ae, *ckpt.stats, *ckpt.flow, ckpt.registry);
}

void TrainedModel::check_label(int label) const {
  if (label < 0 || label >= static_cast<int>(registry_.size())) {
    throw LabelError("unregistered dataset label " + std::to_string(label));
  }
}

Tensor encode_standardized(const TrainedModel& model, const Tensor& pixels) {
  check_pixels(pixels);
  return model.stats().apply(model.ae().encode(pixels));
}

Tensor decode_standardized(const TrainedModel& model, const Tensor& x) {
  return model.ae().decode(model.stats().invert(x));
}

Tensor reconstruct(const TrainedModel& model, const Tensor& pixels) {
  check_pixels(pixels);
  return model.ae().decode(model.ae().encode(pixels));
}

Tensor content_codes(const TrainedModel& model, const Tensor& pixels, std::span<const int> src) {
  return model.flow().forward(encode_standardized(model, pixels), src).first;
}

Tensor project(const TrainedModel& model, const Tensor& pixels, std::span<const int> src,
               std::span<const int> tgt) {
  for (int y : src) model.check_label(y);
  for (int y : tgt) model.check_label(y);
  if (tgt.size() != src.size()) throw ShapeError("project: label list lengths differ");
  const Tensor z = content_codes(model, pixels, src);
  return decode_standardized(model, model.flow().inverse(z, tgt));
}

Tensor project(const TrainedModel& model, const Tensor& pixels, int src, int tgt) {
  const auto s = repeat(src, pixels.rank() == 2 ? pixels.rows() : 0);
  const auto t = repeat(tgt, s.size());
  return project(model, pixels, s, t);
}

Tensor sample_codes(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Tensor z = Tensor::zeros(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, {0x7a636f6465ULL, i});
    for (double& v : z.row(i)) v = rng.normal();
  }
  return z;
}

Tensor sample(const TrainedModel& model, int label, std::size_t n, std::uint64_t seed) {
  model.check_label(label);
  if (n == 0) throw UsageError("sample count must be at least 1");
  const Tensor z = sample_codes(n, model.flow().dim(), seed);
  return decode_standardized(model, model.flow().inverse(z, repeat(label, n)));
}

Tensor roundtrip(const TrainedModel& model, const Tensor& pixels, int src, int tgt,
                 RoundtripMode mode) {
  model.check_label(src);
  model.check_label(tgt);
  if (mode == RoundtripMode::Pixel) {
    return project(model, project(model, pixels, src, tgt), tgt, src);
  }
  const auto s = repeat(src, pixels.rows());
  const auto t = repeat(tgt, pixels.rows());
  const FlowModel& flow = model.flow();
  const Tensor x_tgt = flow.inverse(flow.forward(encode_standardized(model, pixels), s).first, t);
  const Tensor x_back = flow.inverse(flow.forward(x_tgt, t).first, s);
  return decode_standardized(model, x_back);
}

}  // namespace biaslens
