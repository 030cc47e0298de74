#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <zlib.h>

#include "biaslens/errors.hpp"
#include "biaslens/trainer.hpp"

namespace biaslens {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'B', 'L', 'E', 'N', 'S', 'C', 'K', 'P'};
constexpr std::size_t kPrefix = sizeof(kMagic) + 4 + 8;

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), static_cast<uInt>(n));
    offset += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

void check_shape(const Tensor& loaded, const Tensor& expected, const std::string& name) {
  if (!loaded.same_shape(expected)) {
    throw FormatError("tensor " + name + " has shape " + shape_string(loaded.shape()) +
                      ", expected " + shape_string(expected.shape()));
  }
}

}  // namespace

int Checkpoint::label_of(const std::string& name_or_id) const {
  return find_label(registry, name_or_id);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<ConstParamRef> tensors;
  json header;
  header["version"] = ckpt.version;
  json registry = json::array();
  for (const auto& s : ckpt.registry) registry.push_back(spec_to_json(s));
  header["registry"] = registry;
  header["config"] = ckpt.config.to_json();
  header["metrics"] = ckpt.metrics;
  header["ae"] = nullptr;
  header["flow"] = nullptr;
  header["stats"] = ckpt.stats.has_value();

  if (ckpt.ae) {
    header["ae"] = {{"latent", ckpt.ae->latent_dim()}, {"hidden", ckpt.ae->hidden_dim()}};
    for (const auto& p : ckpt.ae->parameters()) tensors.push_back(p);
  }
  if (ckpt.stats) {
    tensors.push_back({"stats.mean", &ckpt.stats->mean});
    tensors.push_back({"stats.stddev", &ckpt.stats->stddev});
  }
  if (ckpt.flow) {
    const FlowConfig& c = ckpt.flow->config();
    json perms = json::array();
    json init = json::array();
    for (const auto& b : ckpt.flow->blocks()) {
      perms.push_back(b.permutation);
      init.push_back(b.actnorm.initialized);
    }
    header["flow"] = {{"dim", c.dim},
                      {"num_labels", c.num_labels},
                      {"embed_dim", c.embed_dim},
                      {"num_blocks", c.num_blocks},
                      {"hidden", c.hidden},
                      {"clamp", c.clamp},
                      {"permutations", perms},
                      {"actnorm_initialized", init}};
    for (const auto& p : ckpt.flow->parameters()) tensors.push_back(p);
    for (const auto& p : ckpt.flow->buffers()) tensors.push_back(p);
  }

  std::ostringstream section;
  json names = json::array();
  for (const auto& t : tensors) {
    names.push_back(t.name);
    t.tensor->serialize(section);
  }
  const std::string section_bytes = section.str();
  header["tensors"] = names;
  header["tensor_bytes"] = section_bytes.size();
  header["tensor_crc32"] = hex32(crc32_of(section_bytes));

  const std::string header_bytes = header.dump();
  std::ostringstream out;
  out.write(kMagic, sizeof(kMagic));
  wire::write_u32(out, ckpt.version);
  wire::write_u64(out, header_bytes.size());
  out << header_bytes << section_bytes;
  std::string body = out.str();
  std::ostringstream trailer;
  wire::write_u32(trailer, crc32_of(body));
  return body + trailer.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kPrefix + 4) throw FormatError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  std::istringstream prefix(bytes.substr(sizeof(kMagic), 12));
  const std::uint32_t version = wire::read_u32(prefix);
  const std::uint64_t header_len = wire::read_u64(prefix);
  if (header_len > bytes.size() - kPrefix - 4) throw FormatError("checkpoint truncated");

  const std::string_view body(bytes.data(), bytes.size() - 4);
  std::istringstream trailer(bytes.substr(bytes.size() - 4));
  if (wire::read_u32(trailer) != crc32_of(body)) {
    throw ChecksumError("checkpoint checksum mismatch (file corrupted)");
  }
  if (version != Checkpoint::kVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                       " (expected " + std::to_string(Checkpoint::kVersion) + ")");
  }

  json header;
  try {
    header = json::parse(bytes.substr(kPrefix, header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header unreadable: ") + e.what());
  }
  const std::string section = bytes.substr(kPrefix + header_len, body.size() - kPrefix - header_len);

  Checkpoint ckpt;
  ckpt.version = version;
  try {
    if (section.size() != header.at("tensor_bytes").get<std::size_t>()) {
      throw FormatError("checkpoint tensor section truncated");
    }
    if (hex32(crc32_of(section)) != header.at("tensor_crc32").get<std::string>()) {
      throw ChecksumError("checkpoint tensor section checksum mismatch");
    }
    for (const auto& e : header.at("registry")) ckpt.registry.push_back(spec_from_json(e));
    validate_registry(ckpt.registry);
    ckpt.config = TrainConfig::from_json(header.at("config"));
    ckpt.metrics = header.at("metrics");

    std::map<std::string, Tensor> loaded;
    std::istringstream in(section);
    for (const auto& name : header.at("tensors")) {
      loaded.emplace(name.get<std::string>(), Tensor::deserialize(in));
    }
    auto take = [&](const std::string& name) -> Tensor {
      auto it = loaded.find(name);
      if (it == loaded.end()) throw FormatError("checkpoint lacks tensor " + name);
      return it->second;
    };

    if (!header.at("ae").is_null()) {
      AEModel ae = AEModel::zeros(header["ae"].at("latent").get<std::size_t>(),
                                  header["ae"].at("hidden").get<std::size_t>());
      for (auto& p : ae.parameters()) {
        Tensor t = take(p.name);
        check_shape(t, *p.tensor, p.name);
        *p.tensor = std::move(t);
      }
      ckpt.ae = std::move(ae);
    }
    if (header.at("stats").get<bool>()) {
      Standardizer s{take("stats.mean"), take("stats.stddev")};
      if (s.mean.rank() != 2 || !s.mean.same_shape(s.stddev)) throw FormatError("bad stats tensors");
      ckpt.stats = std::move(s);
    }
    if (!header.at("flow").is_null()) {
      const json& f = header["flow"];
      FlowConfig c;
      c.dim = f.at("dim");
      c.num_labels = f.at("num_labels");
      c.embed_dim = f.at("embed_dim");
      c.num_blocks = f.at("num_blocks");
      c.hidden = f.at("hidden");
      c.clamp = f.at("clamp");
      FlowModel flow = FlowModel::skeleton(c);
      if (c.num_labels != ckpt.registry.size()) {
        throw FormatError("flow label count disagrees with the dataset registry");
      }
      for (std::size_t b = 0; b < c.num_blocks; ++b) {
        auto perm = f.at("permutations").at(b).get<std::vector<std::size_t>>();
        if (perm.size() != c.dim || !is_permutation(perm)) {
          throw FormatError("invalid permutation in block " + std::to_string(b));
        }
        flow.blocks()[b].permutation = std::move(perm);
        flow.blocks()[b].actnorm.initialized = f.at("actnorm_initialized").at(b).get<bool>();
      }
      for (auto& p : flow.parameters()) {
        Tensor t = take(p.name);
        check_shape(t, *p.tensor, p.name);
        *p.tensor = std::move(t);
      }
      for (std::size_t l = 0; l < c.num_labels; ++l) {
        const std::string p = "flow.output" + std::to_string(l);
        flow.set_output_affine(static_cast<int>(l), take(p + ".shift"), take(p + ".matrix"));
      }
      ckpt.flow = std::move(flow);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const UsageError& e) {
    throw FormatError(std::string("invalid checkpoint contents: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid checkpoint contents: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace biaslens
