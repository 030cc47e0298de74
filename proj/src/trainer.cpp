#include "biaslens/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "biaslens/errors.hpp"

namespace biaslens {

using nlohmann::json;

namespace {

constexpr std::size_t kEvalChunk = 1024;

json optim_to_json(const OptimConfig& o) {
  return json{{"lr", o.lr}, {"batch", o.batch}, {"epochs", o.epochs}, {"weight_decay", o.weight_decay}};
}

OptimConfig optim_from_json(const json& j, OptimConfig o) {
  o.lr = j.value("lr", o.lr);
  o.batch = j.value("batch", o.batch);
  o.epochs = j.value("epochs", o.epochs);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  return o;
}

void validate_optim(const OptimConfig& o, const char* what) {
  if (!(o.lr > 0.0)) throw UsageError(std::string(what) + ".lr must be positive");
  if (o.batch < 2) throw UsageError(std::string(what) + ".batch must be at least 2");
  if (o.epochs < 1) throw UsageError(std::string(what) + ".epochs must be at least 1");
  if (o.weight_decay < 0.0) throw UsageError(std::string(what) + ".weight_decay must be >= 0");
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                    std::uint64_t seed, std::uint64_t stream,
                                                    std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, {stream, epoch});
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    // A trailing single sample would make actnorm-style statistics meaningless.
    if (e - b < 2 && !out.empty()) {
      out.back().push_back(order[b]);
      break;
    }
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

std::vector<const Tensor*> collect_grads(const Graph& g, const std::vector<ParamRef>& params) {
  std::vector<const Tensor*> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(g.param_grad(*p.tensor));
  return grads;
}

void require_labels(const Dataset& data) {
  if (data.size() == 0) throw UsageError("training data is empty");
  std::set<int> present(data.labels.begin(), data.labels.end());
  if (present.size() < 2) throw UsageError("training data needs at least two dataset labels");
}

}  // namespace

void TrainConfig::validate() const {
  if (latent_dim == 0 || ae_hidden == 0 || embed_dim == 0 || flow_blocks == 0 || flow_hidden == 0) {
    throw UsageError("model dimensions must be positive");
  }
  if (!(clamp > 0.0)) throw UsageError("clamp must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw UsageError("invalid Adam hyperparameters");
  }
  if (!(flow_noise >= 0.0) || !std::isfinite(flow_noise)) throw UsageError("flow_noise must be >= 0");
  validate_optim(ae, "ae");
  validate_optim(flow, "flow");
}

FlowConfig TrainConfig::flow_config(std::size_t num_labels) const {
  FlowConfig c;
  c.dim = latent_dim;
  c.num_labels = num_labels;
  c.embed_dim = embed_dim;
  c.num_blocks = flow_blocks;
  c.hidden = flow_hidden;
  c.clamp = clamp;
  return c;
}

AdamHyper TrainConfig::adam(const OptimConfig& opt) const {
  return AdamHyper{opt.lr, beta1, beta2, eps, opt.weight_decay};
}

json TrainConfig::to_json() const {
  return json{{"seed", seed},
              {"manifest", manifest},
              {"dims",
               {{"latent", latent_dim},
                {"ae_hidden", ae_hidden},
                {"embed", embed_dim},
                {"flow_blocks", flow_blocks},
                {"flow_hidden", flow_hidden}}},
              {"clamp", clamp},
              {"flow_noise", flow_noise},
              {"adam", {{"beta1", beta1}, {"beta2", beta2}, {"eps", eps}}},
              {"ae", optim_to_json(ae)},
              {"flow", optim_to_json(flow)}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.manifest = j.value("manifest", c.manifest);
    if (j.contains("dims")) {
      const json& d = j.at("dims");
      c.latent_dim = d.value("latent", c.latent_dim);
      c.ae_hidden = d.value("ae_hidden", c.ae_hidden);
      c.embed_dim = d.value("embed", c.embed_dim);
      c.flow_blocks = d.value("flow_blocks", c.flow_blocks);
      c.flow_hidden = d.value("flow_hidden", c.flow_hidden);
    }
    c.clamp = j.value("clamp", c.clamp);
    c.flow_noise = j.value("flow_noise", c.flow_noise);
    if (j.contains("adam")) {
      c.beta1 = j.at("adam").value("beta1", c.beta1);
      c.beta2 = j.at("adam").value("beta2", c.beta2);
      c.eps = j.at("adam").value("eps", c.eps);
    }
    if (j.contains("ae")) c.ae = optim_from_json(j.at("ae"), c.ae);
    if (j.contains("flow")) c.flow = optim_from_json(j.at("flow"), c.flow);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("cannot parse " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

double reconstruction_mse(const AEModel& model, const Tensor& pixels) {
  double total = 0.0;
  for (std::size_t b = 0; b < pixels.rows(); b += kEvalChunk) {
    const Tensor chunk = pixels.slice_rows(b, std::min(pixels.rows(), b + kEvalChunk));
    const Tensor recon = model.decode(model.encode(chunk));
    for (std::size_t i = 0; i < chunk.numel(); ++i) {
      total += (recon[i] - chunk[i]) * (recon[i] - chunk[i]);
    }
  }
  return total / static_cast<double>(pixels.numel());
}

double mean_nll(const FlowModel& model, const Tensor& x, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t b = 0; b < x.rows(); b += kEvalChunk) {
    const std::size_t e = std::min(x.rows(), b + kEvalChunk);
    const Tensor lp = model.log_prob(x.slice_rows(b, e), labels.subspan(b, e - b));
    for (double v : lp.data()) total -= v;
  }
  return total / static_cast<double>(x.rows());
}

Tensor representations(const AEModel& ae, const Standardizer& stats, const Tensor& pixels) {
  Tensor out({pixels.rows(), ae.latent_dim()});
  for (std::size_t b = 0; b < pixels.rows(); b += kEvalChunk) {
    const std::size_t e = std::min(pixels.rows(), b + kEvalChunk);
    const Tensor x = stats.apply(ae.encode(pixels.slice_rows(b, e)));
    std::copy(x.data().begin(), x.data().end(), out.row(b).begin());
  }
  return out;
}

AeTrainResult train_autoencoder(const TrainConfig& config, const Dataset& data,
                                const EpochCallback& on_epoch) {
  config.validate();
  require_labels(data);
  Rng init(config.seed, {1});
  AeTrainResult result{AEModel(config.latent_dim, config.ae_hidden, init), {}, {}};
  Adam adam(result.model.parameters(), config.adam(config.ae));
  const std::size_t n = data.size();

  for (std::size_t epoch = 0; epoch < config.ae.epochs; ++epoch) {
    double epoch_loss = 0.0;
    try {
      for (const auto& batch : epoch_batches(n, config.ae.batch, config.seed, 2, epoch)) {
        Graph g;
        g.track_params(true);
        const Value x = g.constant(data.pixels.gather_rows(batch));
        const Value diff = g.sub(result.model.decode(g, result.model.encode(g, x)), x);
        const double denom = static_cast<double>(batch.size() * kPixelCount);
        const Value loss = g.scale(g.sum(g.mul(diff, diff)), 1.0 / denom);
        g.backward(loss);
        adam.step(collect_grads(g, adam.params()));
        epoch_loss += loss.value().item() * static_cast<double>(batch.size());
      }
    } catch (const NumericError& e) {
      throw NumericError("autoencoder training diverged in epoch " + std::to_string(epoch) +
                         ": " + e.what());
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("autoencoder loss is not finite in epoch " + std::to_string(epoch));
    }
    result.trace.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }

  Tensor codes({n, config.latent_dim});
  for (std::size_t b = 0; b < n; b += kEvalChunk) {
    const std::size_t e = std::min(n, b + kEvalChunk);
    const Tensor x = result.model.encode(data.pixels.slice_rows(b, e));
    std::copy(x.data().begin(), x.data().end(), codes.row(b).begin());
  }
  result.stats = Standardizer::fit(codes);

  // A collapsed encoder maps every dataset to the same place; the flow could
  // not tell the labels apart, so refuse to hand it on.
  std::vector<Tensor> means;
  for (std::size_t l = 0; l < data.num_labels(); ++l) {
    const auto rows = data.indices_of(static_cast<int>(l));
    if (rows.empty()) continue;
    Tensor m = Tensor::zeros(1, config.latent_dim);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < config.latent_dim; ++j) m[j] += codes(r, j);
    for (double& v : m.data()) v /= static_cast<double>(rows.size());
    if (!m.all_finite()) throw NumericError("non-finite mean code for dataset " + data.specs[l].name);
    for (std::size_t k = 0; k < means.size(); ++k) {
      if (means[k] == m) {
        throw NumericError("datasets " + data.specs[k].name + " and " + data.specs[l].name +
                           " have identical mean codes");
      }
    }
    means.push_back(std::move(m));
  }
  return result;
}

FlowTrainResult train_cinn(const TrainConfig& config, const Dataset& data, const AEModel& ae,
                           const Standardizer& stats, const EpochCallback& on_epoch) {
  config.validate();
  require_labels(data);
  if (ae.latent_dim() != config.latent_dim) {
    throw UsageError("autoencoder latent dim does not match the training config");
  }
  const Tensor x = representations(ae, stats, data.pixels);
  const std::span<const int> labels(data.labels);
  const std::size_t n = data.size();

  Rng init(config.seed, {3});
  FlowTrainResult result;
  result.model = FlowModel(config.flow_config(data.num_labels()), init);

  auto batches = epoch_batches(n, config.flow.batch, config.seed, 4, 0);
  {
    const auto& first = batches.front();
    std::vector<int> first_labels;
    for (std::size_t i : first) first_labels.push_back(data.labels[i]);
    result.model.actnorm_data_init(x.gather_rows(first), first_labels);
  }
  result.initial_nll = mean_nll(result.model, x, labels);

  Adam adam(result.model.parameters(), config.adam(config.flow));
  for (std::size_t epoch = 0; epoch < config.flow.epochs; ++epoch) {
    if (epoch > 0) batches = epoch_batches(n, config.flow.batch, config.seed, 4, epoch);
    Rng noise(config.seed, {5, epoch});
    double epoch_loss = 0.0;
    try {
      for (const auto& batch : batches) {
        std::vector<int> batch_labels;
        batch_labels.reserve(batch.size());
        for (std::size_t i : batch) batch_labels.push_back(data.labels[i]);
        Tensor xb = x.gather_rows(batch);
        if (config.flow_noise > 0.0) {
          for (double& v : xb.data()) v += config.flow_noise * noise.normal();
        }
        Graph g;
        g.track_params(true);
        const Value loss = result.model.nll(g, g.constant(std::move(xb)), batch_labels);
        g.backward(loss);
        adam.step(collect_grads(g, adam.params()));
        epoch_loss += loss.value().item() * static_cast<double>(batch.size());
      }
    } catch (const NumericError& e) {
      throw NumericError("flow training diverged in epoch " + std::to_string(epoch) + ": " +
                         e.what());
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("flow NLL is not finite in epoch " + std::to_string(epoch));
    }
    result.trace.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  result.model.fit_output_affine(x, labels);
  result.final_nll = mean_nll(result.model, x, labels);
  return result;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const double> trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace biaslens
