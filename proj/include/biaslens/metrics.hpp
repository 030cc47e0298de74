#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "biaslens/transfer.hpp"

namespace biaslens {

struct NormalityStats {
  double mean_norm = 0.0;     // ||empirical mean||_2
  double cov_fro_dist = 0.0;  // ||empirical covariance - I||_F
};

/// Rows of `zs` are samples. Needs at least two rows.
NormalityStats z_normality(const Tensor& zs);

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;            // 1 / number of labels
  double label_entropy = 0.0;     // H(y) on the test half, nats
  double test_cross_entropy = 0.0;
  double mi_lower_bound = 0.0;    // max(0, H(y) - test cross-entropy), nats
};

/// Multinomial logistic regression trained on a stratified half of (zs, ys)
/// and scored on the other half. Its held-out cross-entropy bounds the
/// conditional entropy H(y|z) from above, which gives a lower bound on I(z; y).
ProbeResult label_probe(const Tensor& zs, std::span<const int> ys, std::uint64_t seed);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2) between
/// Gaussian fits of the two sample sets (the squared 2-Wasserstein distance).
/// Covariances get a 1e-6 ridge. Each set needs at least dim + 1 rows.
double gaussian_w2(const Tensor& a, const Tensor& b);

/// [x_i] followed by [x_i * x_j for i <= j].
Tensor quadratic_features(const Tensor& x);

/// Ridge regression with an unpenalized intercept.
class ContentProbe {
 public:
  void fit(const Tensor& features, const Tensor& targets, double ridge = 1e-3);
  Tensor predict(const Tensor& features) const;
  bool fitted() const { return weights_.numel() > 0; }

 private:
  Tensor feature_mean_;   // 1 x F
  Tensor feature_scale_;  // 1 x F
  Tensor target_mean_;   // 1 x K
  Tensor weights_;       // F x K
};

/// Coefficient of determination per target column.
std::vector<double> r_squared(const Tensor& predicted, const Tensor& actual);

/// Mean squared 4-neighbour Laplacian over interior pixels and channels.
double laplacian_energy(std::span<const double> pixels);
double mean_brightness(std::span<const double> pixels);
/// Per image: mean R, mean G, mean B, sqrt(Laplacian energy).
Tensor style_features(const Tensor& pixels);

struct SignTest {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t ties = 0;
  double p_value = 1.0;  // two-sided exact binomial, ties dropped
};
SignTest sign_test(std::span<const double> differences);

struct EvalConfig {
  std::uint64_t seed = 7;
  std::size_t pair_samples = 500;    // projected images per ordered dataset pair
  std::size_t sample_count = 1000;   // generated images per dataset
  double probe_ridge = 1e-3;
};

struct PairReport {
  int source = 0;
  int target = 0;
  std::size_t count = 0;
  std::vector<double> content_r2;  // per content dimension
  double content_r2_mean = 0.0;
  double w2_to_target = 0.0;       // style of projections vs real target data
  double w2_to_source = 0.0;       // style of projections vs real source data
  double laplacian_projected = 0.0;
  double laplacian_reconstructed = 0.0;
  SignTest laplacian_change;       // projected - reconstruction, per image
};

struct DatasetStyle {
  std::string name;
  double brightness_mean = 0.0;
  double brightness_std = 0.0;
  double laplacian_mean = 0.0;
  double sample_brightness_mean = 0.0;  // over generated samples
  double sample_brightness_std = 0.0;
  double sample_laplacian_mean = 0.0;
};

struct BiasReport {
  std::vector<std::string> datasets;
  std::size_t num_samples = 0;
  double nll = 0.0;  // mean -log p(x | y) on the evaluation data
  NormalityStats z;
  ProbeResult probe_z;
  ProbeResult probe_representation;  // same probe on x, before the flow
  std::vector<std::vector<double>> z_distance;      // W2 between per-label z
  std::vector<std::vector<double>> style_distance;  // W2 between real datasets
  std::vector<std::vector<double>> sample_distance; // rows: samples(y), cols: real data
  std::vector<double> content_r2_real;
  std::vector<PairReport> pairs;
  std::vector<DatasetStyle> styles;

  nlohmann::json to_json() const;
  const PairReport& pair(int source, int target) const;
};

/// Computes every metric on held-out real data with ground-truth content.
BiasReport evaluate(const TrainedModel& model, const Dataset& data, const EvalConfig& config);

void write_report(const std::filesystem::path& path, const BiasReport& report);
/// Symmetric matrix as CSV with a header row of dataset names.
void write_distance_csv(const std::filesystem::path& path, std::span<const std::string> names,
                        const std::vector<std::vector<double>>& matrix);

}  // namespace biaslens
