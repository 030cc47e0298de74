#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "biaslens/rng.hpp"
#include "biaslens/tensor.hpp"

namespace biaslens {

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPixelCount = kImageSide * kImageSide * kChannels;
inline constexpr std::size_t kContentDim = 4;

/// Ground-truth content: position x, position y, disc size, hue angle; each in
/// [-1, 1]. Only used for evaluation, never seen by the models.
using ContentFactor = std::array<double, kContentDim>;

/// Dataset-specific rendering transform plus curation skew.
///
/// Ranges: palette entries and brightness in [-0.5, 0.5], blur (Gaussian sigma
/// in pixels) in [0, 4], noise (additive Gaussian sigma) in [0, 0.5], skew
/// weights in (0, 10]. skew[k] is the sampling weight of content with
/// c[k] > 0 relative to c[k] <= 0, applied by rejection.
struct StyleMap {
  std::array<double, 3> palette{0.0, 0.0, 0.0};
  double blur = 0.0;
  double noise = 0.0;
  double brightness = 0.0;
  std::array<double, kContentDim> skew{1.0, 1.0, 1.0, 1.0};

  void validate() const;
  std::string describe() const;
};

struct DatasetSpec {
  std::string name;
  int id = 0;
  StyleMap style;
  std::size_t count = 0;
};

/// HWC pixel order: index (row * 16 + col) * 3 + channel.
struct Observation {
  std::vector<double> pixels;
  int label = 0;
  ContentFactor content{};
};

/// In-memory union of datasets, stored column-wise for training.
struct Dataset {
  std::vector<DatasetSpec> specs;
  Tensor pixels;            // N x 768
  std::vector<int> labels;  // N
  Tensor content;           // N x 4

  std::size_t size() const { return labels.size(); }
  std::size_t num_labels() const { return specs.size(); }
  Observation observation(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> indices_of(int label) const;
  std::vector<std::size_t> label_histogram() const;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<DatasetSpec> datasets;
  nlohmann::json to_json() const;
};

nlohmann::json style_to_json(const StyleMap& style);
StyleMap style_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const DatasetSpec& spec);
DatasetSpec spec_from_json(const nlohmann::json& j);

/// Parses {"datasets": [{"name", "count", "style": {...}}, ...]}; ids follow
/// list order. Rejects duplicate names and out-of-range style parameters.
std::vector<DatasetSpec> parse_family_spec(const nlohmann::json& j);
std::vector<DatasetSpec> load_family_spec(const std::filesystem::path& path);
void validate_registry(std::span<const DatasetSpec> specs);
/// Resolves a dataset by name or decimal id; throws LabelError if unknown.
int find_label(std::span<const DatasetSpec> specs, const std::string& name_or_id);

/// Draws content from the spec's skewed marginal by rejection.
ContentFactor draw_content(const StyleMap& style, Rng& rng);

/// Disc at (position, size, hue), then palette shift, blur, brightness bias and
/// additive noise (seeded by `seed`), clamped to [0, 1].
Observation render(const ContentFactor& content, const DatasetSpec& spec, std::uint64_t seed);

/// Sample `index` of a dataset in a family generated with `family_seed`.
Observation generate_observation(const DatasetSpec& spec, std::uint64_t family_seed,
                                 std::size_t index);

Dataset generate_family(std::span<const DatasetSpec> specs, std::uint64_t seed);

/// Generates and writes `<name>.bin` per dataset plus manifest.json.
Manifest generate_family(std::span<const DatasetSpec> specs, std::uint64_t seed,
                         const std::filesystem::path& out_dir);
Manifest write_family(const Dataset& data, std::uint64_t seed, const std::filesystem::path& out_dir);
Dataset load_family(const std::filesystem::path& dir);

/// u32 count, then per sample [768 f64 pixels | u32 label | 4 f64 content].
void write_samples(const std::filesystem::path& path, std::span<const Observation> samples);
std::vector<Observation> read_samples(const std::filesystem::path& path);

/// Stratified, deterministic split. `ratio` is the training fraction per label.
std::pair<Dataset, Dataset> split(const Dataset& data, double ratio, std::uint64_t seed);

}  // namespace biaslens
