#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "biaslens/adam.hpp"
#include "biaslens/autoencoder.hpp"
#include "biaslens/flow.hpp"
#include "biaslens/synthetic.hpp"

namespace biaslens {

struct OptimConfig {
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t epochs = 1;
  double weight_decay = 0.0;
};

struct TrainConfig {
  std::uint64_t seed = 7;
  std::string manifest;
  std::size_t latent_dim = 16;
  std::size_t ae_hidden = 128;
  std::size_t embed_dim = 8;
  std::size_t flow_blocks = 8;
  std::size_t flow_hidden = 64;
  double clamp = 2.0;
  // Stddev of Gaussian noise added to the standardized codes of each flow
  // training batch. Smooths the learned density; the output map is still fit
  // on clean codes.
  double flow_noise = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  OptimConfig ae{1e-3, 64, 40, 0.0};
  OptimConfig flow{5e-4, 128, 100, 0.0};

  void validate() const;
  FlowConfig flow_config(std::size_t num_labels) const;
  AdamHyper adam(const OptimConfig& opt) const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

struct AeTrainResult {
  AEModel model;
  Standardizer stats;
  std::vector<double> trace;  // mean per-pixel MSE per epoch
};

struct FlowTrainResult {
  FlowModel model;
  std::vector<double> trace;  // mean NLL per epoch
  double initial_nll = 0.0;   // full-data NLL right after actnorm init
  double final_nll = 0.0;
};

/// Mean per-pixel squared reconstruction error.
double reconstruction_mse(const AEModel& model, const Tensor& pixels);
/// Mean of -log p(x | y) over the rows.
double mean_nll(const FlowModel& model, const Tensor& x, std::span<const int> labels);

/// Adam on mean per-pixel MSE over the shuffled union of all datasets, then
/// fits the representation standardization on the same union. Throws
/// NumericError if two datasets end up with identical mean codes. The epoch
/// trace is expected to be non-increasing up to a 5% band per epoch.
AeTrainResult train_autoencoder(const TrainConfig& config, const Dataset& data,
                                const EpochCallback& on_epoch = {});

/// Standardized representations of `data` under a trained autoencoder.
Tensor representations(const AEModel& ae, const Standardizer& stats, const Tensor& pixels);

/// Maximum likelihood training of the conditional flow on standardized
/// autoencoder representations; actnorm is data-initialized on the first batch.
FlowTrainResult train_cinn(const TrainConfig& config, const Dataset& data, const AEModel& ae,
                           const Standardizer& stats, const EpochCallback& on_epoch = {});

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::vector<DatasetSpec> registry;
  TrainConfig config;
  std::optional<AEModel> ae;
  std::optional<Standardizer> stats;
  std::optional<FlowModel> flow;
  nlohmann::json metrics = nlohmann::json::object();

  int label_of(const std::string& name_or_id) const;
};

/// Layout: "BLENSCKP" | u32 version | u64 header length | JSON header |
/// tensor section | u32 CRC-32 of everything before it. The header lists the
/// tensor names in section order plus the section's own CRC-32.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `epoch,loss` rows with a header line.
void write_trace_csv(const std::filesystem::path& path, std::span<const double> trace);

}  // namespace biaslens
