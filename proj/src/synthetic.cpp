#include "biaslens/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "biaslens/errors.hpp"

namespace biaslens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kBackground = 0.3;
constexpr double kSaturation = 0.85;
constexpr double kValue = 0.8;
constexpr double kMaxHueDegrees = 240.0;  // red through blue, no wrap-around
constexpr std::uint32_t kManifestVersion = 1;

void check_range(double v, double lo, double hi, const char* what) {
  if (!(v >= lo && v <= hi)) {
    std::ostringstream os;
    os << "style parameter " << what << " = " << v << " outside [" << lo << ", " << hi << "]";
    throw UsageError(os.str());
  }
}

std::array<double, 3> hsv_to_rgb(double hue_deg, double s, double v) {
  const double c = v * s;
  const double h = hue_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (h < 1) { r = c; g = x; }
  else if (h < 2) { r = x; g = c; }
  else if (h < 3) { g = c; b = x; }
  else if (h < 4) { g = x; b = c; }
  else if (h < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

void gaussian_blur(std::vector<double>& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  const int side = static_cast<int>(kImageSide);
  auto clampi = [side](int v) { return std::clamp(v, 0, side - 1); };
  auto at = [](int r, int c, int ch) {
    return (static_cast<std::size_t>(r) * kImageSide + static_cast<std::size_t>(c)) * kChannels +
           static_cast<std::size_t>(ch);
  };
  std::vector<double> tmp(img.size());
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img[at(r, clampi(c + k), ch)];
        tmp[at(r, c, ch)] = acc;
      }
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp[at(clampi(r + k), c, ch)];
        img[at(r, c, ch)] = acc;
      }
}

std::uint64_t noise_seed(std::uint64_t family_seed, const DatasetSpec& spec, std::size_t index) {
  return Rng(family_seed, {static_cast<std::uint64_t>(spec.id), index, 1}).next_u64();
}

}  // namespace

void StyleMap::validate() const {
  for (double p : palette) check_range(p, -0.5, 0.5, "palette");
  check_range(blur, 0.0, 4.0, "blur");
  check_range(noise, 0.0, 0.5, "noise");
  check_range(brightness, -0.5, 0.5, "brightness");
  for (double w : skew) {
    check_range(w, 0.0, 10.0, "skew");
    if (w == 0.0) throw UsageError("style parameter skew must be positive");
  }
}

std::string StyleMap::describe() const {
  std::ostringstream os;
  os << "blur " << blur << "px, noise " << noise << ", brightness " << std::showpos << brightness
     << ", palette (" << palette[0] << ", " << palette[1] << ", " << palette[2] << ")"
     << std::noshowpos;
  const char* names[] = {"x", "y", "size", "hue"};
  for (std::size_t k = 0; k < kContentDim; ++k) {
    if (skew[k] != 1.0) os << ", " << names[k] << ">0 weighted " << skew[k] << ":1";
  }
  return os.str();
}

Observation Dataset::observation(std::size_t i) const {
  Observation obs;
  auto px = pixels.row(i);
  obs.pixels.assign(px.begin(), px.end());
  obs.label = labels.at(i);
  for (std::size_t k = 0; k < kContentDim; ++k) obs.content[k] = content(i, k);
  return obs;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.specs = specs;
  out.pixels = pixels.gather_rows(indices);
  out.content = content.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

std::vector<std::size_t> Dataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::label_histogram() const {
  std::vector<std::size_t> hist(specs.size(), 0);
  for (int l : labels) hist.at(static_cast<std::size_t>(l))++;
  return hist;
}

json style_to_json(const StyleMap& s) {
  return json{{"palette", s.palette}, {"blur", s.blur},           {"noise", s.noise},
              {"brightness", s.brightness}, {"skew", s.skew}};
}

StyleMap style_from_json(const json& j) {
  StyleMap s;
  if (j.contains("palette")) s.palette = j.at("palette").get<std::array<double, 3>>();
  s.blur = j.value("blur", 0.0);
  s.noise = j.value("noise", 0.0);
  s.brightness = j.value("brightness", 0.0);
  if (j.contains("skew")) s.skew = j.at("skew").get<std::array<double, kContentDim>>();
  s.validate();
  return s;
}

json spec_to_json(const DatasetSpec& spec) {
  return json{{"name", spec.name},
              {"id", spec.id},
              {"count", spec.count},
              {"style", style_to_json(spec.style)}};
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.id = j.value("id", 0);
  spec.count = j.value("count", std::size_t{0});
  spec.style = style_from_json(j.value("style", json::object()));
  return spec;
}

json Manifest::to_json() const {
  json sets = json::array();
  for (const auto& d : datasets) {
    json e = spec_to_json(d);
    e["file"] = d.name + ".bin";
    sets.push_back(std::move(e));
  }
  return json{{"format", "biaslens-family"},
              {"version", kManifestVersion},
              {"seed", seed},
              {"image", {{"height", kImageSide}, {"width", kImageSide}, {"channels", kChannels}}},
              {"content_dim", kContentDim},
              {"datasets", std::move(sets)}};
}

void validate_registry(std::span<const DatasetSpec> specs) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].id != static_cast<int>(i)) throw UsageError("dataset ids must be dense 0..n-1");
    if (specs[i].name.empty()) throw UsageError("dataset name must not be empty");
    if (!names.insert(specs[i].name).second) {
      throw UsageError("duplicate dataset name '" + specs[i].name + "'");
    }
    specs[i].style.validate();
  }
}

int find_label(std::span<const DatasetSpec> specs, const std::string& name_or_id) {
  for (const auto& s : specs) {
    if (s.name == name_or_id) return s.id;
  }
  if (!name_or_id.empty() &&
      std::all_of(name_or_id.begin(), name_or_id.end(), [](char c) { return c >= '0' && c <= '9'; }) &&
      name_or_id.size() < 9) {
    const int id = std::stoi(name_or_id);
    if (id < static_cast<int>(specs.size())) return id;
  }
  throw LabelError("unknown dataset '" + name_or_id + "'");
}

std::vector<DatasetSpec> parse_family_spec(const json& j) {
  std::vector<DatasetSpec> specs;
  try {
    for (const auto& e : j.at("datasets")) {
      DatasetSpec spec = spec_from_json(e);
      spec.id = static_cast<int>(specs.size());
      specs.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed family spec: ") + e.what());
  }
  validate_registry(specs);
  return specs;
}

std::vector<DatasetSpec> load_family_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open family spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("cannot parse " + path.string() + ": " + e.what());
  }
  return parse_family_spec(j);
}

ContentFactor draw_content(const StyleMap& style, Rng& rng) {
  double max_weight = 1.0;
  for (double w : style.skew) max_weight *= std::max(w, 1.0);
  for (;;) {
    ContentFactor c;
    double weight = 1.0;
    for (std::size_t k = 0; k < kContentDim; ++k) {
      c[k] = rng.uniform(-1.0, 1.0);
      if (c[k] > 0.0) weight *= style.skew[k];
    }
    if (rng.uniform() * max_weight < weight) return c;
  }
}

Observation render(const ContentFactor& c, const DatasetSpec& spec, std::uint64_t seed) {
  for (double v : c) {
    if (!(v >= -1.0 && v <= 1.0)) throw UsageError("content factor outside [-1, 1]");
  }
  const StyleMap& style = spec.style;
  style.validate();

  const double cx = 3.5 + (c[0] + 1.0) * 4.5;
  const double cy = 3.5 + (c[1] + 1.0) * 4.5;
  const double radius = 2.0 + (c[2] + 1.0) * 1.25;
  const auto color = hsv_to_rgb((c[3] + 1.0) * 0.5 * kMaxHueDegrees, kSaturation, kValue);

  Observation obs;
  obs.label = spec.id;
  obs.content = c;
  obs.pixels.resize(kPixelCount);
  for (std::size_t r = 0; r < kImageSide; ++r) {
    for (std::size_t col = 0; col < kImageSide; ++col) {
      const double dx = static_cast<double>(col) + 0.5 - cx;
      const double dy = static_cast<double>(r) + 0.5 - cy;
      const double coverage = std::clamp(radius - std::sqrt(dx * dx + dy * dy) + 0.5, 0.0, 1.0);
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        obs.pixels[(r * kImageSide + col) * kChannels + ch] =
            kBackground * (1.0 - coverage) + color[ch] * coverage + style.palette[ch];
      }
    }
  }
  if (style.blur > 0.0) gaussian_blur(obs.pixels, style.blur);
  Rng noise(seed, 0x6e6f697365ULL);
  for (double& p : obs.pixels) {
    p += style.brightness;
    if (style.noise > 0.0) p += style.noise * noise.normal();
    p = std::clamp(p, 0.0, 1.0);
  }
  return obs;
}

Observation generate_observation(const DatasetSpec& spec, std::uint64_t family_seed,
                                 std::size_t index) {
  Rng content_rng(family_seed, {static_cast<std::uint64_t>(spec.id), index, 0});
  const ContentFactor c = draw_content(spec.style, content_rng);
  return render(c, spec, noise_seed(family_seed, spec, index));
}

Dataset generate_family(std::span<const DatasetSpec> specs, std::uint64_t seed) {
  if (specs.size() < 2) throw UsageError("a dataset family needs at least two datasets");
  validate_registry(specs);
  std::size_t total = 0;
  for (const auto& s : specs) total += s.count;

  Dataset data;
  data.specs.assign(specs.begin(), specs.end());
  data.pixels = Tensor({total, kPixelCount});
  data.content = Tensor({total, kContentDim});
  data.labels.reserve(total);
  std::size_t row = 0;
  for (const auto& spec : specs) {
    for (std::size_t i = 0; i < spec.count; ++i, ++row) {
      const Observation obs = generate_observation(spec, seed, i);
      std::copy(obs.pixels.begin(), obs.pixels.end(), data.pixels.row(row).begin());
      std::copy(obs.content.begin(), obs.content.end(), data.content.row(row).begin());
      data.labels.push_back(obs.label);
    }
  }
  return data;
}

Manifest write_family(const Dataset& data, std::uint64_t seed, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Manifest manifest;
  manifest.seed = seed;
  manifest.datasets = data.specs;
  for (auto& spec : manifest.datasets) {
    const auto idx = data.indices_of(spec.id);
    spec.count = idx.size();
    std::vector<Observation> samples;
    samples.reserve(idx.size());
    for (std::size_t i : idx) samples.push_back(data.observation(i));
    write_samples(out_dir / (spec.name + ".bin"), samples);
  }
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + out_dir.string());
  out << manifest.to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest");
  return manifest;
}

Manifest generate_family(std::span<const DatasetSpec> specs, std::uint64_t seed,
                         const fs::path& out_dir) {
  return write_family(generate_family(specs, seed), seed, out_dir);
}

Dataset load_family(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("cannot parse manifest: " + std::string(e.what()));
  }
  if (j.value("version", 0u) != kManifestVersion) {
    throw VersionError("unsupported manifest version");
  }

  Dataset data;
  std::vector<std::vector<Observation>> parts;
  std::size_t total = 0;
  try {
    for (const auto& e : j.at("datasets")) {
      DatasetSpec spec = spec_from_json(e);
      parts.push_back(read_samples(dir / e.at("file").get<std::string>()));
      if (parts.back().size() != spec.count) {
        throw FormatError("sample count of " + spec.name + " disagrees with manifest");
      }
      total += spec.count;
      data.specs.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest: " + std::string(e.what()));
  }
  validate_registry(data.specs);

  data.pixels = Tensor({total, kPixelCount});
  data.content = Tensor({total, kContentDim});
  std::size_t row = 0;
  for (const auto& part : parts) {
    for (const auto& obs : part) {
      if (obs.label < 0 || obs.label >= static_cast<int>(data.specs.size())) {
        throw FormatError("sample label out of range");
      }
      std::copy(obs.pixels.begin(), obs.pixels.end(), data.pixels.row(row).begin());
      std::copy(obs.content.begin(), obs.content.end(), data.content.row(row).begin());
      data.labels.push_back(obs.label);
      ++row;
    }
  }
  return data;
}

void write_samples(const fs::path& path, std::span<const Observation> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  wire::write_u32(out, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    if (s.pixels.size() != kPixelCount) throw ShapeError("observation has wrong pixel count");
    for (double p : s.pixels) wire::write_f64(out, p);
    wire::write_u32(out, static_cast<std::uint32_t>(s.label));
    for (double c : s.content) wire::write_f64(out, c);
  }
}

std::vector<Observation> read_samples(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::uint32_t count = wire::read_u32(in);
  std::vector<Observation> out(count);
  for (auto& s : out) {
    s.pixels.resize(kPixelCount);
    for (double& p : s.pixels) p = wire::read_f64(in);
    s.label = static_cast<int>(wire::read_u32(in));
    for (double& c : s.content) c = wire::read_f64(in);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> train, val;
  for (std::size_t label = 0; label < data.num_labels(); ++label) {
    auto idx = data.indices_of(static_cast<int>(label));
    Rng rng(seed, {0x73706c6974ULL, label});
    rng.shuffle(std::span(idx));
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.insert(val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  if (train.empty() || val.empty()) throw UsageError("split produced an empty partition");
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {data.subset(train), data.subset(val)};
}

}  // namespace biaslens
