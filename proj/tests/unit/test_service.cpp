#include "doctest.h"

#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "biaslens/errors.hpp"
#include "biaslens/image.hpp"
#include "biaslens/service.hpp"

using namespace biaslens;
using nlohmann::json;

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
  std::vector<DatasetSpec> specs{{"lowq", 0, a, 20}, {"highq", 1, b, 25}};
  Dataset data = generate_family(specs, 2);
  Rng rng(9);
  AEModel ae(6, 16, rng);
  const Standardizer st = Standardizer::fit(ae.encode(data.pixels));
  FlowConfig fc;
  fc.dim = 6;
  fc.num_labels = 2;
  fc.embed_dim = 3;
  fc.num_blocks = 2;
  fc.hidden = 8;
  FlowModel flow(fc, rng);
  for (auto& blk : flow.blocks())
    for (double& v : blk.coupling.out.weight.data()) v = 0.3 * rng.normal();
  flow.actnorm_data_init(st.apply(ae.encode(data.pixels)), data.labels);
  TrainedModel model(std::move(ae), st, std::move(flow), specs);
  return {std::move(data), std::move(model)};
}

// In-process server on an ephemeral port, stopped on destruction.
struct Running {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  Running(const Service& service, const std::optional<std::filesystem::path>& static_dir = {}) {
    install_routes(server, service, static_dir);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

std::string decode_png_b64(const json& v) { return base64_decode(v.get<std::string>()); }

}  // namespace

TEST_CASE("datasets endpoint") {
  Fixture f = make_fixture();
  const Service svc(f.model, f.data, std::nullopt);
  const Response r = svc.datasets();
  CHECK(r.status == 200);
  const json j = json::parse(r.body);
  REQUIRE(j["datasets"].size() == 2);
  CHECK(j["datasets"][0]["name"] == "lowq");
  CHECK(j["datasets"][1]["id"] == 1);
  CHECK(j["datasets"][1]["available"] == 25);
  CHECK(j["datasets"][0]["style"]["blur"] == 1.0);
}

TEST_CASE("samples endpoint") {
  Fixture f = make_fixture();
  const Service svc(f.model, f.data, std::nullopt);
  const Response r = svc.samples({{"dataset", "highq"}, {"count", "5"}, {"seed", "3"}});
  REQUIRE(r.status == 200);
  const json j = json::parse(r.body);
  CHECK(j["count"] == 5);
  const std::size_t idx = j["images"][2]["index"];
  CHECK(j["images"][2]["ref"] == "highq:" + std::to_string(idx));
  const Image img = decode_png(decode_png_b64(j["images"][2]["png"]));
  const Tensor expected = quantize(Tensor::row_vector(f.data.pixels.row(sample_row(f.data, 1, idx))));
  CHECK(Tensor::row_vector(img.pixels) == expected);
  CHECK(svc.samples({{"dataset", "highq"}, {"count", "5"}, {"seed", "3"}}).body == r.body);

  CHECK(svc.samples({}).status == 400);
  CHECK(svc.samples({{"dataset", "nope"}}).status == 400);
  CHECK(svc.samples({{"dataset", "lowq"}, {"count", "0"}}).status == 400);
  CHECK(svc.samples({{"dataset", "lowq"}, {"count", "abc"}}).status == 400);
  const Service bare(f.model, std::nullopt, std::nullopt);
  CHECK(bare.samples({{"dataset", "lowq"}}).status == 400);
}

TEST_CASE("project with from == to returns the reconstruction") {
  Fixture f = make_fixture();
  const Service svc(f.model, f.data, std::nullopt);
  const Response r = svc.project(json{{"sample_ref", "lowq:4"}, {"to", "lowq"}}.dump());
  REQUIRE(r.status == 200);
  const json j = json::parse(r.body);
  CHECK(j["from"] == "lowq");
  CHECK(j["pixels"] == j["reconstruction"]);
  const Tensor px = Tensor::row_vector(f.data.pixels.row(sample_row(f.data, 0, 4)));
  const Tensor rec = reconstruct(f.model, px);
  CHECK(decode_png_b64(j["pixels"]) == encode_png(rec.data(), 16, 16));
  CHECK(j["z_stats"]["z"].size() == 6);
}

TEST_CASE("project from an uploaded PNG") {
  Fixture f = make_fixture();
  const Service svc(f.model, f.data, std::nullopt);
  const Tensor px = quantize(Tensor::row_vector(f.data.pixels.row(3)));
  const std::string png = base64_encode(encode_png(px.data(), 16, 16));
  const Response r = svc.project(json{{"pixels", png}, {"from", 0}, {"to", "highq"}}.dump());
  REQUIRE(r.status == 200);
  const json j = json::parse(r.body);
  CHECK(j["to"] == "highq");
  CHECK(decode_png_b64(j["pixels"]) == encode_png(project(f.model, px, 0, 1).data(), 16, 16));
  CHECK(decode_png_b64(j["source"]) == base64_decode(png));
}

TEST_CASE("project errors") {
  Fixture f = make_fixture();
  const Service svc(f.model, f.data, std::nullopt);
  CHECK(svc.project("{not json").status == 400);
  CHECK(svc.project("[1, 2]").status == 400);
  CHECK(svc.project(json{{"to", "lowq"}}.dump()).status == 400);
  CHECK(svc.project(json{{"sample_ref", "lowq:1"}}.dump()).status == 400);
  CHECK(svc.project(json{{"sample_ref", "lowq:999"}, {"to", "lowq"}}.dump()).status == 400);
  CHECK(svc.project(json{{"sample_ref", "lowq:1"}, {"to", "other"}}.dump()).status == 400);
  CHECK(svc.project(json{{"pixels", "@@@@"}, {"from", "lowq"}, {"to", "lowq"}}.dump()).status == 400);
  const std::vector<double> big(32 * 32 * 3, 0.5), small(8 * 8 * 3, 0.5);
  CHECK(svc.project(json{{"pixels", base64_encode(encode_png(big, 32, 32))}, {"from", "lowq"}, {"to", "highq"}}.dump())
            .status == 413);
  CHECK(svc.project(json{{"pixels", base64_encode(encode_png(small, 8, 8))}, {"from", "lowq"}, {"to", "highq"}}.dump())
            .status == 400);
  const std::vector<double> ok(16 * 16 * 3, 0.5);
  CHECK(svc.project(json{{"pixels", base64_encode(encode_png(ok, 16, 16))}, {"to", "highq"}}.dump()).status == 400);
  const json err = json::parse(svc.project("{}").body);
  CHECK(err["error"]["status"] == 400);
  CHECK(err["error"]["message"].is_string());
}

TEST_CASE("sample endpoint is deterministic") {
  Fixture f = make_fixture();
  const Service svc(f.model, std::nullopt, std::nullopt);
  const std::string body = json{{"dataset", "highq"}, {"count", 3}, {"seed", 11}}.dump();
  const Response a = svc.sample(body);
  REQUIRE(a.status == 200);
  CHECK(svc.sample(body).body == a.body);
  const json j = json::parse(a.body);
  CHECK(j["images"].size() == 3);
  CHECK(decode_png_b64(j["images"][1]) == encode_png(sample(f.model, 1, 3, 11).row(1), 16, 16));
  CHECK(svc.sample(json{{"dataset", "highq"}, {"count", 65}}.dump()).status == 400);
  CHECK(svc.sample(json{{"dataset", "highq"}, {"seed", -1}}.dump()).status == 400);
  CHECK(svc.sample(json{{"count", 1}}.dump()).status == 400);
}

TEST_CASE("report endpoint") {
  Fixture f = make_fixture();
  CHECK(Service(f.model, std::nullopt, std::nullopt).report().status == 404);
  const Service svc(f.model, std::nullopt, json{{"nll", 1.5}});
  CHECK(json::parse(svc.report().body)["nll"] == 1.5);
}

TEST_CASE("registry mismatch is rejected") {
  Fixture f = make_fixture();
  Dataset other = f.data;
  other.specs[1].name = "renamed";
  CHECK_THROWS_AS(Service(f.model, other, std::nullopt), UsageError);
}

TEST_CASE("address handling") {
  CHECK(parse_address("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK_THROWS_AS(parse_address("localhost"), UsageError);
  CHECK_THROWS_AS(parse_address("h:99999"), UsageError);
  CHECK_THROWS_AS(parse_address("h:x"), UsageError);
  CHECK(resolve_address("0.0.0.0:1") == "0.0.0.0:1");
  ::setenv("BIASLENS_ADDR", "127.0.0.1:9999", 1);
  CHECK(resolve_address("") == "127.0.0.1:9999");
  ::unsetenv("BIASLENS_ADDR");
  CHECK(resolve_address("") == kDefaultAddress);
  const SampleRef r = parse_sample_ref("highq:12");
  CHECK(r.dataset == "highq");
  CHECK(r.index == 12);
  CHECK_THROWS_AS(parse_sample_ref("highq"), UsageError);
  CHECK_THROWS_AS(parse_sample_ref("highq:-1"), UsageError);
}

TEST_CASE("HTTP routes") {
  Fixture f = make_fixture();
  const Service svc(f.model, f.data, json{{"nll", 2.0}});
  const auto static_dir = std::filesystem::temp_directory_path() / "biaslens_static";
  std::filesystem::create_directories(static_dir);
  std::ofstream(static_dir / "index.html") << "<html>bias-lens</html>";
  Running srv(svc, static_dir);
  auto cli = srv.client();

  auto res = cli.Get("/api/datasets");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "application/json");
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(json::parse(res->body)["datasets"].size() == 2);

  res = cli.Get("/api/samples?dataset=lowq&count=2&seed=1");
  REQUIRE(res);
  CHECK(res->body == svc.samples({{"dataset", "lowq"}, {"count", "2"}, {"seed", "1"}}).body);

  const std::string body = json{{"dataset", "lowq"}, {"count", 2}, {"seed", 5}}.dump();
  auto s1 = cli.Post("/api/sample", body, "application/json");
  auto s2 = cli.Post("/api/sample", body, "application/json");
  REQUIRE(s1);
  REQUIRE(s2);
  CHECK(s1->status == 200);
  CHECK(s1->body == s2->body);

  res = cli.Post("/api/project", json{{"sample_ref", "highq:0"}, {"to", "lowq"}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  res = cli.Post("/api/project", "garbage", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  res = cli.Get("/api/report");
  REQUIRE(res);
  CHECK(json::parse(res->body)["nll"] == 2.0);

  res = cli.Get("/api/nothing");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["error"]["status"] == 404);

  res = cli.Options("/api/project");
  REQUIRE(res);
  CHECK(res->status == 204);

  const std::string huge(5u << 20, 'x');
  res = cli.Post("/api/project", huge, "application/json");
  if (res) CHECK(res->status == 413);

  res = cli.Get("/index.html");
  REQUIRE(res);
  CHECK(res->body == "<html>bias-lens</html>");
  std::filesystem::remove_all(static_dir);
}

TEST_CASE("missing static directory") {
  Fixture f = make_fixture();
  const Service svc(f.model, std::nullopt, std::nullopt);
  httplib::Server server;
  CHECK_THROWS_AS(install_routes(server, svc, std::filesystem::path("/nonexistent/static")), UsageError);
}
