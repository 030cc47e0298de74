#include "biaslens/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "biaslens/errors.hpp"

namespace biaslens {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

AffineCoupling coupling_layout(const FlowConfig& c, std::size_t block_index) {
  AffineCoupling cp;
  const std::size_t half = c.dim / 2;
  if (block_index % 2 == 0) {
    cp.passive_begin = 0;
    cp.passive_end = half;
    cp.active_begin = half;
    cp.active_end = c.dim;
  } else {
    cp.active_begin = 0;
    cp.active_end = c.dim - half;
    cp.passive_begin = c.dim - half;
    cp.passive_end = c.dim;
  }
  cp.hidden = Linear::zeros(cp.passive_width() + c.embed_dim, c.hidden);
  cp.out = Linear::zeros(c.hidden, 2 * cp.active_width());
  return cp;
}

Tensor one_hot(std::span<const int> labels, std::size_t n) {
  Tensor t = Tensor::zeros(labels.size(), n);
  for (std::size_t i = 0; i < labels.size(); ++i) t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return t;
}

bool is_identity(std::span<const std::size_t> perm) {
  for (std::size_t i = 0; i < perm.size(); ++i)
    if (perm[i] != i) return false;
  return true;
}

}  // namespace

void FlowConfig::validate() const {
  if (dim == 0) throw UsageError("flow dim must be positive");
  if (num_labels == 0) throw UsageError("flow needs at least one label");
  if (embed_dim == 0 || hidden == 0) throw UsageError("flow widths must be positive");
  if (num_blocks == 0) throw UsageError("flow needs at least one block");
  if (!(clamp > 0.0)) throw UsageError("clamp must be positive");
}

Tensor permutation_matrix(std::span<const std::size_t> perm) {
  Tensor p = Tensor::zeros(perm.size(), perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) p(perm[j], j) = 1.0;
  return p;
}

bool is_permutation(std::span<const std::size_t> perm) {
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t v : perm) {
    if (v >= perm.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

FlowModel FlowModel::skeleton(const FlowConfig& config) {
  config.validate();
  FlowModel m;
  m.config_ = config;
  m.embedding_ = Tensor::zeros(config.num_labels, config.embed_dim);
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    FlowBlock block;
    block.actnorm.log_scale = Tensor::zeros(1, config.dim);
    block.actnorm.bias = Tensor::zeros(1, config.dim);
    block.coupling = coupling_layout(config, b);
    block.permutation.resize(config.dim);
    std::iota(block.permutation.begin(), block.permutation.end(), std::size_t{0});
    m.blocks_.push_back(std::move(block));
  }
  m.reset_output_affine();
  return m;
}

FlowModel::FlowModel(const FlowConfig& config, Rng& rng) {
  *this = skeleton(config);
  for (double& v : embedding_.data()) v = rng.normal();
  for (auto& block : blocks_) {
    const auto& cp = block.coupling;
    block.coupling.hidden = Linear::random(cp.hidden.in_features(), config.hidden, rng);
    rng.shuffle(std::span(block.permutation));
  }
}

FlowModel FlowModel::identity(const FlowConfig& config) {
  FlowModel m = skeleton(config);
  for (auto& block : m.blocks_) block.actnorm.initialized = true;
  return m;
}

bool FlowModel::initialized() const {
  return std::all_of(blocks_.begin(), blocks_.end(),
                     [](const FlowBlock& b) { return b.actnorm.initialized; });
}

void FlowModel::check_ready(std::span<const int> labels, std::size_t rows) const {
  if (!initialized()) throw UsageError("flow actnorm layers are not initialized");
  if (labels.size() != rows) {
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= static_cast<int>(config_.num_labels)) {
      throw LabelError("unregistered dataset label " + std::to_string(y));
    }
  }
}

Value FlowModel::embed(Graph& g, std::span<const int> labels) const {
  return g.matmul(g.constant(one_hot(labels, config_.num_labels)), g.param(embedding_));
}

std::pair<Value, Value> FlowModel::conditioner(Graph& g, const FlowBlock& block,
                                               const Value& passive, const Value& emb) const {
  const AffineCoupling& cp = block.coupling;
  Value input = emb;
  if (cp.passive_width() > 0) {
    const Value parts[] = {passive, emb};
    input = g.concat(parts);
  }
  const Value st = cp.out.forward(g, g.tanh(cp.hidden.forward(g, input)));
  const std::size_t k = cp.active_width();
  const double a = config_.clamp;
  const Value s = g.scale(g.tanh(g.scale(g.slice(st, 0, k), 1.0 / a)), a);
  return {s, g.slice(st, k, 2 * k)};
}

FlowModel::Output FlowModel::block_forward(Graph& g, const FlowBlock& block, const Value& x,
                                           const Value& emb) const {
  const std::size_t n = x.rows();
  const ActNorm& an = block.actnorm;
  const Value log_scale = g.param(an.log_scale);
  const Value h = g.mul(g.add(x, g.param(an.bias)), g.exp(log_scale));
  Value logdet = g.add(g.constant(Tensor::zeros(n, 1)), g.sum(log_scale));

  const AffineCoupling& cp = block.coupling;
  Value passive;
  if (cp.passive_width() > 0) passive = g.slice(h, cp.passive_begin, cp.passive_end);
  const Value active = g.slice(h, cp.active_begin, cp.active_end);
  const auto [s, t] = conditioner(g, block, passive, emb);
  const Value active_out = g.add(g.mul(active, g.exp(s)), t);
  logdet = g.add(logdet, g.matmul(s, g.constant(Tensor::full(cp.active_width(), 1, 1.0))));

  Value merged = active_out;
  if (cp.passive_width() > 0) {
    const Value parts_pf[] = {passive, active_out};
    const Value parts_af[] = {active_out, passive};
    merged = g.concat(cp.passive_first() ? std::span<const Value>(parts_pf)
                                         : std::span<const Value>(parts_af));
  }
  if (!is_identity(block.permutation)) {
    merged = g.matmul(merged, g.constant(permutation_matrix(block.permutation)));
  }
  return {merged, logdet};
}

FlowModel::Output FlowModel::forward(Graph& g, const Value& x, std::span<const int> labels) const {
  if (x.shape().size() != 2 || x.cols() != config_.dim) {
    throw ShapeError("flow expects N x " + std::to_string(config_.dim) + ", got " +
                     shape_string(x.shape()));
  }
  check_ready(labels, x.rows());
  const Value emb = embed(g, labels);
  Value h = x;
  Value logdet = g.constant(Tensor::zeros(x.rows(), 1));
  for (const auto& block : blocks_) {
    Output o = block_forward(g, block, h, emb);
    h = o.z;
    logdet = g.add(logdet, o.logdet);
  }
  if (output_is_identity()) return {h, logdet};
  Output o = output_forward(g, h, labels);
  return {o.z, g.add(logdet, o.logdet)};
}

bool FlowModel::output_is_identity() const {
  for (const auto& o : output_) {
    if (o.shift != Tensor::zeros(1, config_.dim) || o.matrix != Tensor::identity(config_.dim)) return false;
  }
  return true;
}

// Rows are routed through their label's map with 0/1 row masks, so the
// result for a row does not depend on the other rows in the batch.
FlowModel::Output FlowModel::output_forward(Graph& g, const Value& z, std::span<const int> labels) const {
  const std::size_t n = z.rows(), d = config_.dim;
  Tensor logdet = Tensor::zeros(n, 1);
  for (std::size_t i = 0; i < n; ++i) logdet(i, 0) = output_[static_cast<std::size_t>(labels[i])].logdet;
  Value out;
  for (std::size_t l = 0; l < output_.size(); ++l) {
    Tensor mask = Tensor::zeros(n, d);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != static_cast<int>(l)) continue;
      any = true;
      for (std::size_t j = 0; j < d; ++j) mask(i, j) = 1.0;
    }
    if (!any) continue;
    const OutputAffine& o = output_[l];
    const Value mapped = g.matmul(g.sub(z, g.constant(o.shift)), g.constant(o.matrix));
    const Value part = g.mul(mapped, g.constant(std::move(mask)));
    out = out.valid() ? g.add(out, part) : part;
  }
  return {out, g.constant(std::move(logdet))};
}

void FlowModel::reset_output_affine() {
  output_.clear();
  for (std::size_t l = 0; l < config_.num_labels; ++l) {
    set_output_affine(static_cast<int>(l), Tensor::zeros(1, config_.dim), Tensor::identity(config_.dim));
  }
}

void FlowModel::set_output_affine(int label, Tensor shift, Tensor matrix) {
  if (label < 0 || label >= static_cast<int>(config_.num_labels)) {
    throw LabelError("unregistered dataset label " + std::to_string(label));
  }
  const std::size_t d = config_.dim;
  if (shift.shape() != Shape{1, d} || matrix.shape() != Shape{d, d}) {
    throw ShapeError("output map needs a 1 x d shift and a d x d matrix");
  }
  if (!shift.all_finite() || !matrix.all_finite()) throw NumericError("non-finite output map");
  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd m(dd, dd);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = matrix(i, j);
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible() || lu.rcond() < 1e-12) throw UsageError("output matrix is singular");
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < dd; ++i) logdet += std::log(std::abs(lu.matrixLU()(i, i)));
  const Eigen::MatrixXd inv = lu.inverse();
  Tensor inverse = Tensor::zeros(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) inverse(i, j) = inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  if (output_.size() < config_.num_labels) output_.resize(config_.num_labels);
  output_[static_cast<std::size_t>(label)] = {std::move(shift), std::move(matrix), std::move(inverse), logdet};
}

const OutputAffine& FlowModel::output_affine(int label) const {
  if (label < 0 || label >= static_cast<int>(output_.size())) {
    throw LabelError("unregistered dataset label " + std::to_string(label));
  }
  return output_[static_cast<std::size_t>(label)];
}

void FlowModel::fit_output_affine(const Tensor& x, std::span<const int> labels) {
  reset_output_affine();
  const Tensor z = forward(x, labels).first;
  const std::size_t d = config_.dim;
  const auto dd = static_cast<Eigen::Index>(d);
  for (std::size_t l = 0; l < config_.num_labels; ++l) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == static_cast<int>(l)) rows.push_back(i);
    if (rows.size() <= d) {
      throw UsageError("fitting the output map needs more than " + std::to_string(d) +
                       " rows for label " + std::to_string(l));
    }
    Eigen::MatrixXd zl(static_cast<Eigen::Index>(rows.size()), dd);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) zl(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = z(rows[r], j);
    const Eigen::VectorXd mean = zl.colwise().mean();
    const Eigen::MatrixXd centered = zl.rowwise() - mean.transpose();
    // Maximum-likelihood covariance (divide by n).
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows.size());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 1e-12)) {
      throw NumericError("codes of label " + std::to_string(l) + " have a singular covariance");
    }
    const Eigen::MatrixXd w = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                              es.eigenvectors().transpose();
    Tensor shift = Tensor::zeros(1, d), matrix = Tensor::zeros(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      shift[i] = mean(static_cast<Eigen::Index>(i));
      for (std::size_t j = 0; j < d; ++j) matrix(i, j) = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    set_output_affine(static_cast<int>(l), std::move(shift), std::move(matrix));
  }
}

Value FlowModel::nll(Graph& g, const Value& x, std::span<const int> labels) const {
  const Output o = forward(g, x, labels);
  const double n = static_cast<double>(x.rows());
  const Value energy = g.scale(g.sum(g.mul(o.z, o.z)), 0.5 / n);
  const Value mean_logdet = g.scale(g.sum(o.logdet), 1.0 / n);
  const double norm = static_cast<double>(config_.dim) * kHalfLog2Pi;
  return g.add(g.sub(energy, mean_logdet), g.constant(Tensor::scalar(norm)));
}

std::pair<Tensor, Tensor> FlowModel::forward(const Tensor& x, std::span<const int> labels) const {
  Graph g;
  const Output o = forward(g, g.constant(x), labels);
  return {o.z.value(), o.logdet.value()};
}

Tensor FlowModel::inverse(const Tensor& z, std::span<const int> labels) const {
  if (z.rank() != 2 || z.cols() != config_.dim) {
    throw ShapeError("flow inverse expects N x " + std::to_string(config_.dim));
  }
  check_ready(labels, z.rows());
  Graph g;
  const Value emb = embed(g, labels);
  Value h = g.constant(z);
  if (!output_is_identity()) {
    Value un;
    for (std::size_t l = 0; l < output_.size(); ++l) {
      Tensor mask = Tensor::zeros(z.rows(), config_.dim);
      bool any = false;
      for (std::size_t i = 0; i < z.rows(); ++i) {
        if (labels[i] != static_cast<int>(l)) continue;
        any = true;
        for (std::size_t j = 0; j < config_.dim; ++j) mask(i, j) = 1.0;
      }
      if (!any) continue;
      const OutputAffine& o = output_[l];
      const Value part = g.mul(g.add(g.matmul(h, g.constant(o.inverse)), g.constant(o.shift)),
                               g.constant(std::move(mask)));
      un = un.valid() ? g.add(un, part) : part;
    }
    h = un;
  }
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    const FlowBlock& block = *it;
    if (!is_identity(block.permutation)) {
      Tensor pt = permutation_matrix(block.permutation);
      Tensor p_inv = Tensor::zeros(config_.dim, config_.dim);
      for (std::size_t i = 0; i < config_.dim; ++i)
        for (std::size_t j = 0; j < config_.dim; ++j) p_inv(j, i) = pt(i, j);
      h = g.matmul(h, g.constant(std::move(p_inv)));
    }
    const AffineCoupling& cp = block.coupling;
    Value passive;
    if (cp.passive_width() > 0) passive = g.slice(h, cp.passive_begin, cp.passive_end);
    const Value active_out = g.slice(h, cp.active_begin, cp.active_end);
    const auto [s, t] = conditioner(g, block, passive, emb);
    const Value active = g.mul(g.sub(active_out, t), g.exp(g.scale(s, -1.0)));
    Value merged = active;
    if (cp.passive_width() > 0) {
      const Value parts_pf[] = {passive, active};
      const Value parts_af[] = {active, passive};
      merged = g.concat(cp.passive_first() ? std::span<const Value>(parts_pf)
                                           : std::span<const Value>(parts_af));
    }
    const ActNorm& an = block.actnorm;
    h = g.sub(g.mul(merged, g.exp(g.scale(g.param(an.log_scale), -1.0))), g.param(an.bias));
  }
  return h.value();
}

Tensor FlowModel::log_prob(const Tensor& x, std::span<const int> labels) const {
  auto [z, logdet] = forward(x, labels);
  Tensor out = logdet;
  const double norm = static_cast<double>(config_.dim) * kHalfLog2Pi;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double sq = 0.0;
    for (double v : z.row(i)) sq += v * v;
    out(i, 0) += -0.5 * sq - norm;
  }
  if (!out.all_finite()) throw NumericError("non-finite log-probability");
  return out;
}

void FlowModel::actnorm_data_init(const Tensor& x, std::span<const int> labels) {
  for (const auto& block : blocks_) {
    if (block.actnorm.initialized) throw UsageError("actnorm already initialized");
  }
  if (x.rank() != 2 || x.cols() != config_.dim) throw ShapeError("actnorm init: bad batch shape");
  if (x.rows() < 2) throw UsageError("actnorm init needs at least two samples");
  if (labels.size() != x.rows()) throw ShapeError("actnorm init: label count mismatch");
  for (int y : labels) {
    if (y < 0 || y >= static_cast<int>(config_.num_labels)) {
      throw LabelError("unregistered dataset label " + std::to_string(y));
    }
  }

  Graph g;
  const Value emb = embed(g, labels);
  Tensor h = x;
  const std::size_t n = x.rows(), d = x.cols();
  for (auto& block : blocks_) {
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += h(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (h(i, j) - mean) * (h(i, j) - mean);
      const double sd = std::sqrt(var / static_cast<double>(n));
      if (!(sd > 1e-12)) {
        throw NumericError("actnorm init: dimension " + std::to_string(j) +
                           " has zero variance (degenerate data)");
      }
      block.actnorm.bias[j] = -mean;
      block.actnorm.log_scale[j] = -std::log(sd);
    }
    block.actnorm.initialized = true;
    h = block_forward(g, block, g.constant(h), emb).z.value();
  }
}

std::vector<ParamRef> FlowModel::parameters() {
  std::vector<ParamRef> out;
  out.push_back({"flow.embedding", &embedding_});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "flow.block" + std::to_string(b);
    out.push_back({p + ".actnorm.log_scale", &blocks_[b].actnorm.log_scale});
    out.push_back({p + ".actnorm.bias", &blocks_[b].actnorm.bias});
    blocks_[b].coupling.hidden.collect(p + ".coupling.hidden", out);
    blocks_[b].coupling.out.collect(p + ".coupling.out", out);
  }
  return out;
}

std::vector<ConstParamRef> FlowModel::buffers() const {
  std::vector<ConstParamRef> out;
  for (std::size_t l = 0; l < output_.size(); ++l) {
    const std::string p = "flow.output" + std::to_string(l);
    out.push_back({p + ".shift", &output_[l].shift});
    out.push_back({p + ".matrix", &output_[l].matrix});
  }
  return out;
}

std::vector<ConstParamRef> FlowModel::parameters() const {
  std::vector<ConstParamRef> out;
  out.push_back({"flow.embedding", &embedding_});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "flow.block" + std::to_string(b);
    out.push_back({p + ".actnorm.log_scale", &blocks_[b].actnorm.log_scale});
    out.push_back({p + ".actnorm.bias", &blocks_[b].actnorm.bias});
    blocks_[b].coupling.hidden.collect(p + ".coupling.hidden", out);
    blocks_[b].coupling.out.collect(p + ".coupling.out", out);
  }
  return out;
}

}  // namespace biaslens
