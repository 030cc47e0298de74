#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

#include "biaslens/metrics.hpp"
#include "biaslens/transfer.hpp"

namespace httplib {
class Server;
}

namespace biaslens {

inline constexpr const char* kDefaultAddress = "127.0.0.1:8080";
inline constexpr std::size_t kMaxImagesPerRequest = 64;

struct Response {
  int status = 200;
  std::string body;  // JSON
};

/// Request handlers over an immutable model snapshot. Each handler is a pure
/// function of its arguments, so one instance can serve concurrent requests.
class Service {
 public:
  /// `data` backs /api/samples and sample references; `report` backs
  /// /api/report. Either may be absent, in which case those endpoints 404.
  Service(TrainedModel model, std::optional<Dataset> data, std::optional<nlohmann::json> report);

  Response datasets() const;
  Response samples(const std::map<std::string, std::string>& query) const;
  Response project(const std::string& body) const;
  Response sample(const std::string& body) const;
  Response report() const;

  const TrainedModel& model() const { return model_; }

 private:
  nlohmann::json project_json(const nlohmann::json& request) const;
  nlohmann::json sample_json(const nlohmann::json& request) const;

  TrainedModel model_;
  std::optional<Dataset> data_;
  std::optional<std::string> report_body_;
};

/// Observation `index` of dataset `label` in `data`, by position within that dataset.
std::size_t sample_row(const Dataset& data, int label, std::size_t index);

/// "name:index" or "id:index".
struct SampleRef {
  std::string dataset;
  std::size_t index = 0;
};
SampleRef parse_sample_ref(const std::string& text);

/// Registers the /api routes (and `static_dir` at "/", if given) on `server`.
/// `service` must outlive the server.
void install_routes(httplib::Server& server, const Service& service,
                    const std::optional<std::filesystem::path>& static_dir = std::nullopt);

/// "host:port"; throws UsageError otherwise.
std::pair<std::string, int> parse_address(const std::string& address);
/// `explicit_address` if non-empty, else $BIASLENS_ADDR, else the default.
std::string resolve_address(const std::string& explicit_address);

/// Blocks until the server stops.
void serve(const Service& service, const std::string& address,
           const std::optional<std::filesystem::path>& static_dir);

}  // namespace biaslens
