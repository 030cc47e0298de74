#include "biaslens/service.hpp"

#include <cstdlib>
#include <numeric>

#include "httplib.h"

#include "biaslens/errors.hpp"
#include "biaslens/image.hpp"

namespace biaslens {

using nlohmann::json;

namespace {

// Raised for uploads bigger than the model's 16x16 input.
class PayloadTooLarge : public UsageError {
 public:
  using UsageError::UsageError;
};

std::string error_body(int status, const std::string& message) {
  return json{{"error", {{"status", status}, {"message", message}}}}.dump();
}

template <typename F>
Response guarded(F&& f) {
  try {
    return Response{200, f().dump()};
  } catch (const PayloadTooLarge& e) {
    return {413, error_body(413, e.what())};
  } catch (const NumericError& e) {
    return {500, error_body(500, e.what())};
  } catch (const Error& e) {
    // Usage, label, shape and format errors are all the client's fault here.
    return {400, error_body(400, e.what())};
  } catch (const json::exception& e) {
    return {400, error_body(400, std::string("malformed JSON: ") + e.what())};
  } catch (const std::exception& e) {
    return {500, error_body(500, e.what())};
  }
}

std::string png_of(std::span<const double> pixels) {
  return base64_encode(encode_png(pixels, kImageSide, kImageSide));
}

std::uint64_t parse_u64(const std::string& text, const char* what) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw UsageError(std::string(what) + " must be a non-negative integer");
  }
  try {
    return std::stoull(text);
  } catch (const std::out_of_range&) {
    throw UsageError(std::string(what) + " is out of range");
  }
}

std::size_t checked_count(std::uint64_t count) {
  if (count == 0 || count > kMaxImagesPerRequest) {
    throw UsageError("count must be between 1 and " + std::to_string(kMaxImagesPerRequest));
  }
  return static_cast<std::size_t>(count);
}

std::uint64_t json_u64(const json& request, const char* key, std::uint64_t fallback) {
  if (!request.contains(key)) return fallback;
  const json& v = request.at(key);
  if (!v.is_number_unsigned()) throw UsageError(std::string(key) + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

// Datasets may be named by string or by numeric id.
std::string json_dataset(const json& v, const char* key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw UsageError(std::string(key) + " must be a dataset name or id");
}

json parse_object(const std::string& body) {
  json request = json::parse(body);
  if (!request.is_object()) throw UsageError("request body must be a JSON object");
  return request;
}

}  // namespace

std::size_t sample_row(const Dataset& data, int label, std::size_t index) {
  const auto rows = data.indices_of(label);
  if (index >= rows.size()) {
    throw UsageError("sample index " + std::to_string(index) + " out of range for dataset with " +
                     std::to_string(rows.size()) + " samples");
  }
  return rows[index];
}

SampleRef parse_sample_ref(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw UsageError("sample reference must look like dataset:index");
  }
  return {text.substr(0, colon), static_cast<std::size_t>(parse_u64(text.substr(colon + 1), "sample index"))};
}

Service::Service(TrainedModel model, std::optional<Dataset> data, std::optional<json> report)
    : model_(std::move(model)), data_(std::move(data)) {
  if (data_) {
    if (data_->specs.size() != model_.num_labels()) {
      throw UsageError("dataset registry does not match the checkpoint");
    }
    for (std::size_t i = 0; i < data_->specs.size(); ++i) {
      if (data_->specs[i].name != model_.registry()[i].name) {
        throw UsageError("dataset '" + data_->specs[i].name + "' does not match the checkpoint");
      }
    }
  }
  if (report) report_body_ = report->dump();
}

Response Service::datasets() const {
  return guarded([&] {
    json list = json::array();
    for (const auto& spec : model_.registry()) {
      json entry{{"id", spec.id},
                 {"name", spec.name},
                 {"description", spec.style.describe()},
                 {"style", style_to_json(spec.style)}};
      entry["available"] = data_ ? data_->indices_of(spec.id).size() : 0;
      list.push_back(std::move(entry));
    }
    return json{{"datasets", list}};
  });
}

Response Service::samples(const std::map<std::string, std::string>& query) const {
  return guarded([&] {
    if (!data_) throw UsageError("service was started without dataset files");
    const auto ds = query.find("dataset");
    if (ds == query.end()) throw UsageError("missing query parameter: dataset");
    const int label = model_.label_of(ds->second);
    const auto c = query.find("count");
    const std::size_t count = checked_count(c == query.end() ? 8 : parse_u64(c->second, "count"));
    const auto s = query.find("seed");
    const std::uint64_t seed = s == query.end() ? 0 : parse_u64(s->second, "seed");

    const auto rows = data_->indices_of(label);
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, {0x7468756d62ULL, static_cast<std::uint64_t>(label)});
    rng.shuffle(std::span(order));
    order.resize(std::min(count, order.size()));

    const std::string& name = model_.registry()[static_cast<std::size_t>(label)].name;
    json images = json::array();
    for (std::size_t idx : order) {
      images.push_back({{"ref", name + ":" + std::to_string(idx)},
                        {"index", idx},
                        {"png", png_of(data_->pixels.row(rows[idx]))}});
    }
    return json{{"dataset", name}, {"seed", seed}, {"count", images.size()}, {"images", images}};
  });
}

json Service::project_json(const json& request) const {
  const bool has_pixels = request.contains("pixels");
  const bool has_ref = request.contains("sample_ref");
  if (has_pixels == has_ref) throw UsageError("give exactly one of pixels or sample_ref");
  if (!request.contains("to")) throw UsageError("missing field: to");
  const int tgt = model_.label_of(json_dataset(request.at("to"), "to"));

  Tensor pixels;
  int src = -1;
  if (has_ref) {
    if (!data_) throw UsageError("service was started without dataset files");
    const json& ref_field = request.at("sample_ref");
    if (!ref_field.is_string()) throw UsageError("sample_ref must be a string");
    const SampleRef ref = parse_sample_ref(ref_field.get<std::string>());
    const int ref_label = model_.label_of(ref.dataset);
    pixels = Tensor::row_vector(data_->pixels.row(sample_row(*data_, ref_label, ref.index)));
    src = ref_label;
  } else {
    const json& field = request.at("pixels");
    if (!field.is_string()) throw UsageError("pixels must be a base64 PNG string");
    const Image image = decode_png(base64_decode(field.get<std::string>()));
    if (image.width > kImageSide || image.height > kImageSide) {
      throw PayloadTooLarge("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                            "; the model takes 16x16");
    }
    if (image.width != kImageSide || image.height != kImageSide) {
      throw UsageError("image must be 16x16");
    }
    pixels = Tensor::row_vector(image.pixels);
  }
  if (request.contains("from")) {
    src = model_.label_of(json_dataset(request.at("from"), "from"));
  } else if (src < 0) {
    throw UsageError("missing field: from");
  }

  const Tensor reconstruction = biaslens::project(model_, pixels, src, src);
  const Tensor projected = biaslens::project(model_, pixels, src, tgt);
  const std::vector<int> labels{src};
  const Tensor x = encode_standardized(model_, pixels);
  const Tensor z = model_.flow().forward(x, labels).first;
  const double log_prob = model_.flow().log_prob(x, labels).item();

  const auto zs = z.row(0);
  const double mean = std::accumulate(zs.begin(), zs.end(), 0.0) / static_cast<double>(zs.size());
  double sq = 0.0, centered = 0.0;
  for (double v : zs) {
    sq += v * v;
    centered += (v - mean) * (v - mean);
  }
  const auto& names = model_.registry();
  return json{{"from", names[static_cast<std::size_t>(src)].name},
              {"to", names[static_cast<std::size_t>(tgt)].name},
              {"source", png_of(pixels.row(0))},
              {"reconstruction", png_of(reconstruction.row(0))},
              {"pixels", png_of(projected.row(0))},
              {"z_stats",
               {{"z", std::vector<double>(zs.begin(), zs.end())},
                {"norm", std::sqrt(sq)},
                {"mean", mean},
                {"std", std::sqrt(centered / static_cast<double>(zs.size()))},
                {"log_prob", log_prob}}}};
}

Response Service::project(const std::string& body) const {
  return guarded([&] { return project_json(parse_object(body)); });
}

json Service::sample_json(const json& request) const {
  if (!request.contains("dataset")) throw UsageError("missing field: dataset");
  const int label = model_.label_of(json_dataset(request.at("dataset"), "dataset"));
  const std::size_t count = checked_count(json_u64(request, "count", 8));
  const std::uint64_t seed = json_u64(request, "seed", 0);
  const Tensor images = biaslens::sample(model_, label, count, seed);
  json list = json::array();
  for (std::size_t i = 0; i < images.rows(); ++i) list.push_back(png_of(images.row(i)));
  return json{{"dataset", model_.registry()[static_cast<std::size_t>(label)].name},
              {"seed", seed},
              {"count", count},
              {"images", list}};
}

Response Service::sample(const std::string& body) const {
  return guarded([&] { return sample_json(parse_object(body)); });
}

Response Service::report() const {
  if (!report_body_) return {404, error_body(404, "no report loaded; start serve with --report or --data")};
  return {200, *report_body_};
}

void install_routes(httplib::Server& server, const Service& service,
                    const std::optional<std::filesystem::path>& static_dir) {
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.set_payload_max_length(4u << 20);

  server.Get("/api/datasets", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.datasets());
  });
  server.Get("/api/samples", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    reply(res, service.samples(query));
  });
  server.Post("/api/project", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.project(req.body));
  });
  server.Post("/api/sample", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.sample(req.body));
  });
  server.Get("/api/report", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.report());
  });
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  // Fills in JSON bodies for statuses httplib produces on its own (404, 413, ...).
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(error_body(res.status, httplib::status_message(res.status)), "application/json");
    }
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    res.status = 500;
    res.set_content(error_body(500, "internal error"), "application/json");
  });

  if (static_dir && !server.set_mount_point("/", static_dir->string())) {
    throw UsageError("static directory does not exist: " + static_dir->string());
  }
}

std::pair<std::string, int> parse_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw UsageError("address must look like host:port, got '" + address + "'");
  }
  const std::uint64_t port = parse_u64(address.substr(colon + 1), "port");
  if (port > 65535) throw UsageError("port out of range: " + std::to_string(port));
  return {address.substr(0, colon), static_cast<int>(port)};
}

std::string resolve_address(const std::string& explicit_address) {
  if (!explicit_address.empty()) return explicit_address;
  if (const char* env = std::getenv("BIASLENS_ADDR"); env != nullptr && *env != '\0') return env;
  return kDefaultAddress;
}

void serve(const Service& service, const std::string& address,
           const std::optional<std::filesystem::path>& static_dir) {
  const auto [host, port] = parse_address(address);
  httplib::Server server;
  install_routes(server, service, static_dir);
  if (!server.bind_to_port(host, port)) throw IoError("cannot bind " + address);
  server.listen_after_bind();
}

}  // namespace biaslens
