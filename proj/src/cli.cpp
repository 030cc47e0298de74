#include "biaslens/cli.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "biaslens/errors.hpp"
#include "biaslens/image.hpp"
#include "biaslens/metrics.hpp"
#include "biaslens/service.hpp"

namespace biaslens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Ties a checkpoint to the data it was trained on without recording paths,
// so identical runs in different directories produce identical files.
std::string manifest_fingerprint(const fs::path& data_dir) {
  const std::string bytes = read_file(data_dir / "manifest.json");
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()),
                         static_cast<uInt>(bytes.size()));
  std::ostringstream s;
  s << "crc32:" << std::hex << std::setw(8) << std::setfill('0') << crc;
  return s.str();
}

void require_same_registry(const std::vector<DatasetSpec>& a, const std::vector<DatasetSpec>& b) {
  if (a.size() != b.size()) throw UsageError("dataset registry does not match the checkpoint");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name) {
      throw UsageError("dataset '" + b[i].name + "' does not match checkpoint dataset '" + a[i].name + "'");
    }
  }
}

TrainConfig training_config(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                            const TrainConfig& fallback) {
  TrainConfig cfg = config_path.empty() ? fallback : TrainConfig::load(config_path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

EvalConfig eval_config(const std::string& config_path) {
  EvalConfig cfg;
  if (config_path.empty()) return cfg;
  json j;
  try {
    j = json::parse(read_file(config_path));
    cfg.seed = j.value("seed", cfg.seed);
    cfg.pair_samples = j.value("pair_samples", cfg.pair_samples);
    cfg.sample_count = j.value("sample_count", cfg.sample_count);
    cfg.probe_ridge = j.value("probe_ridge", cfg.probe_ridge);
  } catch (const json::exception& e) {
    throw UsageError("malformed eval config: " + std::string(e.what()));
  }
  return cfg;
}

struct Options {
  std::string spec, out, data, ckpt, config, in, sample_ref, from, to, dataset, report, static_dir, addr,
      trace;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count, pair_samples, sample_count;
};

int gen(const Options& o, std::ostream& out) {
  auto specs = load_family_spec(o.spec);
  if (o.count) {
    if (*o.count == 0) throw UsageError("--count must be positive");
    for (auto& s : specs) s.count = *o.count;
  }
  const Manifest m = generate_family(specs, o.seed.value_or(7), o.out);
  std::size_t total = 0;
  for (const auto& s : m.datasets) total += s.count;
  out << "wrote " << total << " samples in " << m.datasets.size() << " datasets to " << o.out << '\n';
  return 0;
}

int train_ae(const Options& o, std::ostream& out) {
  const Dataset data = load_family(o.data);
  TrainConfig cfg = training_config(o.config, o.seed, TrainConfig{});
  cfg.manifest = manifest_fingerprint(o.data);
  auto result = train_autoencoder(cfg, data, [&](std::size_t epoch, double loss) {
    out << "ae epoch " << epoch << " mse " << loss << '\n' << std::flush;
  });
  Checkpoint ckpt;
  ckpt.registry = data.specs;
  ckpt.config = cfg;
  ckpt.ae = std::move(result.model);
  ckpt.stats = std::move(result.stats);
  ckpt.metrics["ae_train_mse"] = result.trace.back();
  save_checkpoint(o.out, ckpt);
  if (!o.trace.empty()) write_trace_csv(o.trace, result.trace);
  out << "saved " << o.out << '\n';
  return 0;
}

int train_flow(const Options& o, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(o.ckpt);
  if (!ckpt.ae || !ckpt.stats) throw UsageError(o.ckpt + " holds no trained autoencoder");
  const Dataset data = load_family(o.data);
  require_same_registry(ckpt.registry, data.specs);
  TrainConfig cfg = training_config(o.config, o.seed, ckpt.config);
  cfg.manifest = manifest_fingerprint(o.data);
  auto result = train_cinn(cfg, data, *ckpt.ae, *ckpt.stats, [&](std::size_t epoch, double loss) {
    out << "flow epoch " << epoch << " nll " << loss << '\n' << std::flush;
  });
  ckpt.config = cfg;
  ckpt.flow = std::move(result.model);
  ckpt.metrics["flow_initial_nll"] = result.initial_nll;
  ckpt.metrics["flow_final_nll"] = result.final_nll;
  save_checkpoint(o.out, ckpt);
  if (!o.trace.empty()) write_trace_csv(o.trace, result.trace);
  out << "nll " << result.initial_nll << " -> " << result.final_nll << "\nsaved " << o.out << '\n';
  return 0;
}

TrainedModel load_model(const std::string& path) { return TrainedModel::from_checkpoint(load_checkpoint(path)); }

int project_cmd(const Options& o, std::ostream& out) {
  const TrainedModel model = load_model(o.ckpt);
  if (o.in.empty() == o.sample_ref.empty()) throw UsageError("give exactly one of --in or --sample-ref");
  Tensor pixels;
  int src = -1;
  if (!o.in.empty()) {
    const Image image = read_png(o.in);
    if (image.width != kImageSide || image.height != kImageSide) {
      throw UsageError("input image must be 16x16, got " + std::to_string(image.width) + "x" +
                       std::to_string(image.height));
    }
    pixels = Tensor::row_vector(image.pixels);
  } else {
    if (o.data.empty()) throw UsageError("--sample-ref needs --data");
    const Dataset data = load_family(o.data);
    require_same_registry(model.registry(), data.specs);
    const SampleRef ref = parse_sample_ref(o.sample_ref);
    src = model.label_of(ref.dataset);
    pixels = Tensor::row_vector(data.pixels.row(sample_row(data, src, ref.index)));
  }
  if (!o.from.empty()) src = model.label_of(o.from);
  if (src < 0) throw UsageError("--from is required with --in");
  const int tgt = model.label_of(o.to);
  const Tensor projected = project(model, pixels, src, tgt);
  write_png(o.out, projected.row(0), kImageSide, kImageSide);
  out << "wrote " << o.out << '\n';
  return 0;
}

int sample_cmd(const Options& o, std::ostream& out) {
  const TrainedModel model = load_model(o.ckpt);
  const int label = model.label_of(o.dataset);
  const std::size_t count = o.count.value_or(8);
  if (count == 0) throw UsageError("--count must be positive");
  const Tensor images = sample(model, label, count, o.seed.value_or(0));
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < images.rows(); ++i) {
    write_png(fs::path(o.out) / sample_file_name(i), images.row(i), kImageSide, kImageSide);
  }
  out << "wrote " << count << " samples to " << o.out << '\n';
  return 0;
}

int eval_cmd(const Options& o, std::ostream& out) {
  const TrainedModel model = load_model(o.ckpt);
  const Dataset data = load_family(o.data);
  EvalConfig cfg = eval_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.pair_samples) cfg.pair_samples = *o.pair_samples;
  if (o.sample_count) cfg.sample_count = *o.sample_count;
  const BiasReport report = evaluate(model, data, cfg);
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  fs::create_directories(dir);
  write_report(dir / "report.json", report);
  write_distance_csv(dir / "distances.csv", report.datasets, report.z_distance);
  write_distance_csv(dir / "style_distances.csv", report.datasets, report.style_distance);
  write_distance_csv(dir / "sample_distances.csv", report.datasets, report.sample_distance);
  out << "z mean norm " << report.z.mean_norm << ", cov distance " << report.z.cov_fro_dist
      << ", probe accuracy " << report.probe_z.accuracy << " (chance " << report.probe_z.chance << ")\n"
      << "wrote " << (dir / "report.json").string() << '\n';
  return 0;
}

int serve_cmd(const Options& o, std::ostream& out) {
  TrainedModel model = load_model(o.ckpt);
  std::optional<Dataset> data;
  if (!o.data.empty()) data = load_family(o.data);
  std::optional<json> report;
  if (!o.report.empty()) {
    try {
      report = json::parse(read_file(o.report));
    } catch (const json::exception& e) {
      throw FormatError("cannot parse report " + o.report + ": " + e.what());
    }
  } else if (data) {
    out << "computing report from " << o.data << '\n' << std::flush;
    report = evaluate(model, *data, EvalConfig{}).to_json();
  }
  const Service service(std::move(model), std::move(data), std::move(report));
  const std::string address = resolve_address(o.addr);
  std::optional<fs::path> static_dir;
  if (!o.static_dir.empty()) static_dir = o.static_dir;
  out << "listening on http://" << address << '\n' << std::flush;
  serve(service, address, static_dir);
  return 0;
}

}  // namespace

std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04zu.png", index);
  return buf;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"bias-lens: disentangle dataset bias with a conditional invertible flow", "bias-lens"};
  app.require_subcommand(1);
  Options o;

  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset family");
  gen_cmd->add_option("--spec,--config", o.spec, "family spec JSON")->required();
  gen_cmd->add_option("--out", o.out, "output directory")->required();
  gen_cmd->add_option("--seed", o.seed, "family seed (default 7)");
  gen_cmd->add_option("--count", o.count, "override every dataset's sample count");

  auto* ae_cmd = app.add_subcommand("train-ae", "train the autoencoder on a dataset family");
  ae_cmd->add_option("--data", o.data, "dataset directory")->required();
  ae_cmd->add_option("--config", o.config, "training config JSON");
  ae_cmd->add_option("--seed", o.seed, "override the config seed");
  ae_cmd->add_option("--out", o.out, "checkpoint to write")->required();
  ae_cmd->add_option("--trace", o.trace, "write per-epoch loss CSV");

  auto* flow_cmd = app.add_subcommand("train-flow", "train the conditional flow on autoencoder codes");
  flow_cmd->add_option("--ckpt", o.ckpt, "checkpoint with a trained autoencoder")->required();
  flow_cmd->add_option("--data", o.data, "dataset directory")->required();
  flow_cmd->add_option("--config", o.config, "training config JSON (default: the checkpoint's)");
  flow_cmd->add_option("--seed", o.seed, "override the config seed");
  flow_cmd->add_option("--out", o.out, "checkpoint to write")->required();
  flow_cmd->add_option("--trace", o.trace, "write per-epoch loss CSV");

  auto* proj_cmd = app.add_subcommand("project", "render an image's content in another dataset's style");
  proj_cmd->add_option("--ckpt", o.ckpt, "trained checkpoint")->required();
  proj_cmd->add_option("--in", o.in, "16x16 PNG");
  proj_cmd->add_option("--sample-ref", o.sample_ref, "dataset:index of a stored sample");
  proj_cmd->add_option("--data", o.data, "dataset directory for --sample-ref");
  proj_cmd->add_option("--from", o.from, "source dataset (defaults to the sample's)");
  proj_cmd->add_option("--to", o.to, "target dataset")->required();
  proj_cmd->add_option("--out", o.out, "PNG to write")->required();

  auto* samp_cmd = app.add_subcommand("sample", "decode prior samples under one dataset");
  samp_cmd->add_option("--ckpt", o.ckpt, "trained checkpoint")->required();
  samp_cmd->add_option("--dataset", o.dataset, "dataset name or id")->required();
  samp_cmd->add_option("--count", o.count, "number of images (default 8)");
  samp_cmd->add_option("--seed", o.seed, "sampling seed (default 0)");
  samp_cmd->add_option("--out", o.out, "output directory")->required();

  auto* ev_cmd = app.add_subcommand("eval", "compute the bias report");
  ev_cmd->add_option("--ckpt", o.ckpt, "trained checkpoint")->required();
  ev_cmd->add_option("--data", o.data, "evaluation dataset directory")->required();
  ev_cmd->add_option("--config", o.config, "eval config JSON");
  ev_cmd->add_option("--seed", o.seed, "probe and sampling seed (default 7)");
  ev_cmd->add_option("--out", o.out, "output directory (default .)");
  ev_cmd->add_option("--pair-samples", o.pair_samples, "projected images per dataset pair");
  ev_cmd->add_option("--sample-count", o.sample_count, "generated images per dataset");

  auto* srv_cmd = app.add_subcommand("serve", "serve the HTTP/JSON API");
  srv_cmd->add_option("--ckpt", o.ckpt, "trained checkpoint")->required();
  srv_cmd->add_option("--data", o.data, "dataset directory for thumbnails and sample refs");
  srv_cmd->add_option("--report", o.report, "report.json to serve (default: computed from --data)");
  srv_cmd->add_option("--static", o.static_dir, "directory served at /");
  srv_cmd->add_option("--addr", o.addr, "host:port (default $BIASLENS_ADDR or 127.0.0.1:8080)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return gen(o, out);
    if (ae_cmd->parsed()) return train_ae(o, out);
    if (flow_cmd->parsed()) return train_flow(o, out);
    if (proj_cmd->parsed()) return project_cmd(o, out);
    if (samp_cmd->parsed()) return sample_cmd(o, out);
    if (ev_cmd->parsed()) return eval_cmd(o, out);
    if (srv_cmd->parsed()) return serve_cmd(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace biaslens
