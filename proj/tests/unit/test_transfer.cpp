#include "doctest.h"

#include <cmath>

#include "biaslens/errors.hpp"
#include "biaslens/transfer.hpp"

using namespace biaslens;

namespace {

struct Fixture {
  Dataset data;
  TrainedModel model;
};

Fixture make_fixture() {
  StyleMap a;
  a.blur = 1.0;
  StyleMap b;
  b.brightness = 0.15;
  std::vector<DatasetSpec> specs{{"a", 0, a, 30}, {"b", 1, b, 30}};
  Dataset data = generate_family(specs, 2);
  Rng rng(9);
  AEModel ae(6, 16, rng);
  const Standardizer st = Standardizer::fit(ae.encode(data.pixels));
  FlowConfig fc;
  fc.dim = 6;
  fc.num_labels = 2;
  fc.embed_dim = 3;
  fc.num_blocks = 4;
  fc.hidden = 8;
  FlowModel flow(fc, rng);
  for (auto& b : flow.blocks())
    for (double& v : b.coupling.out.weight.data()) v = 0.3 * rng.normal();
  flow.actnorm_data_init(st.apply(ae.encode(data.pixels)), data.labels);
  TrainedModel model(std::move(ae), st, std::move(flow), specs);
  return {std::move(data), std::move(model)};
}

}  // namespace

TEST_CASE("projection onto the source dataset is the reconstruction") {
  const Fixture f = make_fixture();
  const Tensor rec = reconstruct(f.model, f.data.pixels);
  CHECK(max_abs_diff(project(f.model, f.data.pixels, f.data.labels, f.data.labels), rec) < 1e-9);
  CHECK(max_abs_diff(project(f.model, f.data.pixels.slice_rows(0, 5), 0, 0), rec.slice_rows(0, 5)) < 1e-9);
}

TEST_CASE("projection follows the composition formula") {
  const Fixture f = make_fixture();
  const Tensor px = f.data.pixels.slice_rows(0, 4);
  const std::vector<int> src(4, 0), tgt(4, 1);
  const Tensor x = f.model.stats().apply(f.model.ae().encode(px));
  const Tensor z = f.model.flow().forward(x, src).first;
  const Tensor expected = f.model.ae().decode(f.model.stats().invert(f.model.flow().inverse(z, tgt)));
  CHECK(project(f.model, px, src, tgt) == expected);
  CHECK(content_codes(f.model, px, src) == z);
  CHECK(max_abs_diff(project(f.model, px, 0, 1), px) > 0.0);
}

TEST_CASE("projection rows are independent of the batch") {
  const Fixture f = make_fixture();
  const Tensor all = project(f.model, f.data.pixels, 1, 0);
  for (std::size_t i : {0u, 17u, 59u})
    CHECK(project(f.model, f.data.pixels.slice_rows(i, i + 1), 1, 0) == all.slice_rows(i, i + 1));
}

TEST_CASE("sampling") {
  const Fixture f = make_fixture();
  const Tensor a = sample(f.model, 1, 5, 42);
  CHECK(a.rows() == 5);
  CHECK(a.cols() == kPixelCount);
  CHECK(a == sample(f.model, 1, 5, 42));
  CHECK_FALSE(a == sample(f.model, 1, 5, 43));
  CHECK_FALSE(a == sample(f.model, 0, 5, 42));
  // Row i depends only on (seed, i).
  CHECK(sample(f.model, 1, 8, 42).slice_rows(0, 5) == a);
  const Tensor codes = sample_codes(4, 6, 42);
  CHECK(codes == sample_codes(6, 6, 42).slice_rows(0, 4));
  CHECK_THROWS_AS(sample(f.model, 0, 0, 1), UsageError);
}

TEST_CASE("round trips") {
  const Fixture f = make_fixture();
  const Tensor px = f.data.pixels.slice_rows(0, 6);
  const Tensor rec = project(f.model, px, 0, 0);
  CHECK(max_abs_diff(roundtrip(f.model, px, 0, 1, RoundtripMode::Latent), rec) < 1e-9);
  const Tensor pixel = roundtrip(f.model, px, 0, 1, RoundtripMode::Pixel);
  CHECK(pixel.rows() == 6);
  CHECK(pixel.all_finite());
}

TEST_CASE("labels are checked") {
  const Fixture f = make_fixture();
  CHECK_THROWS_AS(project(f.model, f.data.pixels.slice_rows(0, 1), 0, 2), LabelError);
  CHECK_THROWS_AS(sample(f.model, -1, 1, 0), LabelError);
  CHECK(f.model.label_of("b") == 1);
  CHECK_THROWS_AS(f.model.label_of("c"), LabelError);
  CHECK_THROWS_AS(project(f.model, Tensor::zeros(1, 10), 0, 1), ShapeError);
}
