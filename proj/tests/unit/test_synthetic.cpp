#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "biaslens/errors.hpp"
#include "biaslens/synthetic.hpp"

using namespace biaslens;
namespace fs = std::filesystem;

namespace {

DatasetSpec make_spec(std::string name, int id, StyleMap style, std::size_t count = 10) {
  DatasetSpec s;
  s.name = std::move(name);
  s.id = id;
  s.style = style;
  s.count = count;
  return s;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("biaslens_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("render is deterministic and in range") {
  const ContentFactor c{0.1, -0.4, 0.3, 0.8};
  StyleMap noisy;
  noisy.noise = 0.1;
  noisy.blur = 1.0;
  const auto spec = make_spec("a", 0, noisy);
  const Observation a = render(c, spec, 42);
  const Observation b = render(c, spec, 42);
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels.size() == kPixelCount);
  for (double p : a.pixels) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(render(c, spec, 43).pixels != a.pixels);
}

TEST_CASE("identity style renders a clean disc") {
  const auto spec = make_spec("clean", 0, StyleMap{});
  const Observation o = render({0, 0, 0, 0}, spec, 1);
  // Centre pixel is inside the disc, corner is background.
  const auto px = [&](int r, int c, int ch) { return o.pixels[(r * 16 + c) * 3 + ch]; };
  CHECK(px(0, 0, 0) == px(0, 15, 0));
  CHECK(px(8, 8, 0) != px(0, 0, 0));
  CHECK(render({0, 0, 0, 0}, spec, 99).pixels == o.pixels);  // no noise: seed is irrelevant
}

TEST_CASE("low and high quality styles differ") {
  StyleMap low;
  low.blur = 2.0;
  low.noise = 0.1;
  StyleMap high;
  high.noise = 0.01;
  const ContentFactor c{0.2, 0.2, -0.5, 0.1};
  const auto a = render(c, make_spec("low", 0, low), 5).pixels;
  const auto b = render(c, make_spec("high", 1, high), 5).pixels;
  double mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(mse / a.size() > 0.0);
}

TEST_CASE("brightness bias of +0.2 shifts mean brightness by 0.2") {
  StyleMap plain;
  StyleMap bright;
  bright.brightness = 0.2;
  const auto s0 = make_spec("plain", 0, plain);
  const auto s1 = make_spec("bright", 1, bright);
  Rng rng(8);
  std::vector<double> m0, m1;
  for (int i = 0; i < 1000; ++i) {
    const ContentFactor c = draw_content(plain, rng);
    m0.push_back(mean(render(c, s0, i).pixels));
    m1.push_back(mean(render(c, s1, i).pixels));
  }
  CHECK(std::abs(mean(m1) - mean(m0) - 0.2) < 0.02);
}

TEST_CASE("style validation") {
  StyleMap s;
  s.blur = 5.0;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s = StyleMap{};
  s.noise = -0.1;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s = StyleMap{};
  s.skew[2] = 0.0;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s = StyleMap{};
  s.palette[1] = 0.7;
  CHECK_THROWS_AS(render({0, 0, 0, 0}, make_spec("x", 0, s), 1), UsageError);
  CHECK_THROWS_AS(render({0, 0, 1.5, 0}, make_spec("x", 0, StyleMap{}), 1), UsageError);
}

TEST_CASE("family label histogram") {
  std::vector<DatasetSpec> specs{make_spec("a", 0, {}, 2000), make_spec("b", 1, {}, 2000),
                                 make_spec("c", 2, {}, 2000)};
  const Dataset d = generate_family(specs, 3);
  CHECK(d.size() == 6000);
  CHECK(d.label_histogram() == std::vector<std::size_t>{2000, 2000, 2000});
}

TEST_CASE("3:1 size skew") {
  StyleMap s;
  s.skew = {1.0, 1.0, 3.0, 1.0};
  Rng rng(21);
  const int n = 20000;
  int big = 0;
  for (int i = 0; i < n; ++i) big += draw_content(s, rng)[2] > 0.0;
  CHECK(std::abs(static_cast<double>(big) / n - 0.75) < 0.02);

  // Also through the generator, at the family-level count.
  std::vector<DatasetSpec> specs{make_spec("a", 0, s, 4000), make_spec("b", 1, {}, 10)};
  const Dataset d = generate_family(specs, 5);
  int pos = 0;
  for (std::size_t i : d.indices_of(0)) pos += d.content(i, 2) > 0.0;
  CHECK(std::abs(pos / 4000.0 - 0.75) < 0.02);
}

TEST_CASE("registry errors") {
  std::vector<DatasetSpec> dup{make_spec("a", 0, {}), make_spec("a", 1, {})};
  CHECK_THROWS_AS(generate_family(dup, 1), UsageError);
  std::vector<DatasetSpec> one{make_spec("a", 0, {})};
  CHECK_THROWS_AS(generate_family(one, 1), UsageError);
  const nlohmann::json j = {{"datasets",
                             {{{"name", "a"}, {"count", 3}, {"style", {{"blur", 9.0}}}},
                              {{"name", "b"}, {"count", 3}}}}};
  CHECK_THROWS_AS(parse_family_spec(j), UsageError);
}

TEST_CASE("find_label") {
  std::vector<DatasetSpec> specs{make_spec("lowq", 0, {}), make_spec("highq", 1, {})};
  CHECK(find_label(specs, "highq") == 1);
  CHECK(find_label(specs, "0") == 0);
  CHECK_THROWS_AS(find_label(specs, "nope"), LabelError);
  CHECK_THROWS_AS(find_label(specs, "2"), LabelError);
}

TEST_CASE("same seed writes identical files; observations reproduce from manifest") {
  StyleMap noisy;
  noisy.noise = 0.05;
  noisy.skew = {2.0, 1.0, 1.0, 1.0};
  std::vector<DatasetSpec> specs{make_spec("a", 0, noisy, 30), make_spec("b", 1, {}, 20)};
  const fs::path d1 = temp_dir("fam1"), d2 = temp_dir("fam2");
  generate_family(specs, 77, d1);
  generate_family(specs, 77, d2);
  for (const char* f : {"manifest.json", "a.bin", "b.bin"}) {
    INFO(f);
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  const Dataset loaded = load_family(d1);
  CHECK(loaded.size() == 50);
  const Observation o = generate_observation(loaded.specs[0], 77, 17);
  const auto idx = loaded.indices_of(0);
  const Observation stored = loaded.observation(idx[17]);
  CHECK(o.pixels == stored.pixels);
  CHECK(o.content == stored.content);

  const auto file = read_samples(d1 / "b.bin");
  CHECK(file.size() == 20);
  CHECK(file[3].label == 1);

  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("sample file layout") {
  Observation o;
  o.pixels.assign(kPixelCount, 0.25);
  o.label = 2;
  o.content = {0.5, -0.5, 0, 1};
  const fs::path dir = temp_dir("layout");
  fs::create_directories(dir);
  write_samples(dir / "x.bin", std::span(&o, 1));
  const std::string bytes = slurp(dir / "x.bin");
  CHECK(bytes.size() == 4 + kPixelCount * 8 + 4 + 4 * 8);
  CHECK(bytes[0] == 1);
  CHECK(bytes[4 + kPixelCount * 8] == 2);
  // Truncated files are rejected.
  std::ofstream(dir / "y.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(read_samples(dir / "y.bin"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("split") {
  std::vector<DatasetSpec> specs{make_spec("a", 0, {}, 100), make_spec("b", 1, {}, 100)};
  const Dataset d = generate_family(specs, 9);
  const auto [train, val] = split(d, 0.5, 1);
  CHECK(train.label_histogram() == std::vector<std::size_t>{50, 50});
  CHECK(val.label_histogram() == std::vector<std::size_t>{50, 50});

  // Union of the splits is the original set: match rows by content factor.
  std::multiset<std::vector<double>> all, parts;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto r = d.content.row(i);
    all.insert({r.begin(), r.end()});
  }
  for (const Dataset* p : {&train, &val})
    for (std::size_t i = 0; i < p->size(); ++i) {
      const auto r = p->content.row(i);
      parts.insert({r.begin(), r.end()});
    }
  CHECK(all == parts);

  const auto [train2, val2] = split(d, 0.5, 2);
  CHECK(train2.label_histogram() == train.label_histogram());
  CHECK_FALSE(train2.content == train.content);
  const auto [train3, val3] = split(d, 0.5, 1);
  CHECK(train3.content == train.content);

  CHECK_THROWS_AS(split(d, 1.0, 1), UsageError);
  CHECK_THROWS_AS(split(d, 0.001, 1), UsageError);
}
