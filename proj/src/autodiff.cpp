#include "biaslens/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "biaslens/errors.hpp"

namespace biaslens {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Sum: return "sum";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Scale: return "scale";
  }
  return "?";
}

namespace {

void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " +
                     shape_string(t.shape()));
  }
}

void require_finite(const Tensor& t, std::string_view op) {
  if (!t.all_finite()) throw NumericError("non-finite output in " + std::string(op));
}

// Right operand broadcast: equal shapes, or b is 1 x n against a m x n.
bool broadcasts_rows(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.same_shape(b)) return false;
  if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) return true;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                   " and " + shape_string(b.shape()));
}

// C = A * B with a fixed accumulation order per output row, so a row's result
// does not depend on how many other rows share the batch.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B for A (m x k), B (m x n), C (k x n).
void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor transpose(const Tensor& t) {
  const std::size_t r = t.rows(), c = t.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = t(i, j);
  return out;
}

// Sum over rows: m x n -> 1 x n.
Tensor column_sums(const Tensor& t) {
  Tensor out({1, t.cols()});
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[j] += t(i, j);
  return out;
}

}  // namespace

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  gemm(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
  require_finite(out, "matmul");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  if (broadcasts_rows(a, b, "add")) {
    const std::size_t n = a.cols();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i % n];
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  }
  require_finite(out, "add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  if (broadcasts_rows(a, b, "mul")) {
    const std::size_t n = a.cols();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i % n];
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  }
  require_finite(out, "mul");
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v = std::tanh(v);
  require_finite(out, "tanh");
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v = std::exp(v);
  require_finite(out, "exp");
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  require_finite(out, "sum");
  return out;
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice");
  if (begin >= end || end > a.cols()) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_string(a.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({a.rows(), w});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = a(i, begin + j);
  return out;
}

Tensor concat(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const std::size_t m = parts.front()->rows();
  std::size_t n = 0;
  for (const Tensor* p : parts) {
    require_rank2(*p, "concat");
    if (p->rows() != m) throw ShapeError("concat: row counts differ");
    n += p->cols();
  }
  Tensor out({m, n});
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p->cols(); ++j) out(i, offset + j) = (*p)(i, j);
    offset += p->cols();
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.data()) v *= factor;
  require_finite(out, "scale");
  return out;
}

}  // namespace ops

Tensor forward_op(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& attrs) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + " takes " + std::to_string(n) +
                       " inputs, got " + std::to_string(in.size()));
    }
  };
  for (const Tensor* t : in) {
    if (!t->all_finite()) throw NumericError("non-finite input to " + std::string(op_name(kind)));
  }
  switch (kind) {
    case OpKind::MatMul: arity(2); return ops::matmul(*in[0], *in[1]);
    case OpKind::Add: arity(2); return ops::add(*in[0], *in[1]);
    case OpKind::Mul: arity(2); return ops::mul(*in[0], *in[1]);
    case OpKind::Tanh: arity(1); return ops::tanh(*in[0]);
    case OpKind::Exp: arity(1); return ops::exp(*in[0]);
    case OpKind::Sum: arity(1); return ops::sum(*in[0]);
    case OpKind::Slice: arity(1); return ops::slice(*in[0], attrs.begin, attrs.end);
    case OpKind::Concat: return ops::concat(in);
    case OpKind::Scale: arity(1); return ops::scale(*in[0], attrs.factor);
  }
  throw UsageError("unknown op kind");
}

Value Graph::constant(Tensor t) const {
  return Value(std::make_shared<const Tensor>(std::move(t)), -1);
}

Value Graph::leaf(Tensor t) {
  if (consumed_) throw UsageError("graph already consumed by backward()");
  Node node;
  node.is_leaf = true;
  node.output = std::make_shared<const Tensor>(std::move(t));
  nodes_.push_back(std::move(node));
  return Value(nodes_.back().output, static_cast<int>(nodes_.size() - 1));
}

Value Graph::param(const Tensor& p) {
  if (!track_params_) return constant(p);
  auto it = params_.find(&p);
  if (it != params_.end()) return it->second;
  Value v = leaf(p);
  params_.emplace(&p, v);
  return v;
}

Value Graph::apply(OpKind kind, std::span<const Value> inputs, const OpAttrs& attrs) {
  std::vector<const Tensor*> raw;
  raw.reserve(inputs.size());
  bool tracked = false;
  for (const Value& v : inputs) {
    raw.push_back(v.data_.get());
    tracked = tracked || v.requires_grad();
  }
  auto out = std::make_shared<const Tensor>(forward_op(kind, raw, attrs));
  if (!tracked) return Value(std::move(out), -1);
  if (consumed_) throw UsageError("graph already consumed by backward()");

  Node node;
  node.kind = kind;
  node.attrs = attrs;
  node.output = out;
  for (const Value& v : inputs) {
    node.inputs.push_back(v.node_);
    node.input_values.push_back(v.data_);
  }
  nodes_.push_back(std::move(node));
  return Value(std::move(out), static_cast<int>(nodes_.size() - 1));
}

Value Graph::matmul(const Value& a, const Value& b) {
  const Value in[] = {a, b};
  return apply(OpKind::MatMul, in);
}
Value Graph::add(const Value& a, const Value& b) {
  const Value in[] = {a, b};
  return apply(OpKind::Add, in);
}
Value Graph::sub(const Value& a, const Value& b) { return add(a, scale(b, -1.0)); }
Value Graph::mul(const Value& a, const Value& b) {
  const Value in[] = {a, b};
  return apply(OpKind::Mul, in);
}
Value Graph::tanh(const Value& a) { return apply(OpKind::Tanh, std::span(&a, 1)); }
Value Graph::exp(const Value& a) { return apply(OpKind::Exp, std::span(&a, 1)); }
Value Graph::sum(const Value& a) { return apply(OpKind::Sum, std::span(&a, 1)); }
Value Graph::slice(const Value& a, std::size_t begin, std::size_t end) {
  OpAttrs attrs;
  attrs.begin = begin;
  attrs.end = end;
  return apply(OpKind::Slice, std::span(&a, 1), attrs);
}
Value Graph::concat(std::span<const Value> parts) { return apply(OpKind::Concat, parts); }
Value Graph::scale(const Value& a, double factor) {
  OpAttrs attrs;
  attrs.factor = factor;
  return apply(OpKind::Scale, std::span(&a, 1), attrs);
}

void Graph::accumulate(int node, const Tensor& g) {
  if (node < 0) return;
  double* dst = grads_[static_cast<std::size_t>(node)].data().data();
  const double* src = g.data().data();
  const std::size_t n = g.numel();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

void Graph::backward(const Value& loss) {
  if (consumed_) throw UsageError("backward() called twice on the same graph");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  consumed_ = true;
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.emplace_back(n.output->shape());
  if (loss.node_ < 0) return;
  grads_[static_cast<std::size_t>(loss.node_)][0] = 1.0;

  for (int id = loss.node_; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf) continue;
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    const Tensor& y = *n.output;
    auto needs = [&](std::size_t i) { return n.inputs[i] >= 0; };
    auto in = [&](std::size_t i) -> const Tensor& { return *n.input_values[i]; };

    switch (n.kind) {
      case OpKind::MatMul: {
        if (needs(0)) accumulate(n.inputs[0], ops::matmul(g, transpose(in(1))));
        if (needs(1)) {
          const Tensor& a = in(0);
          Tensor gb({a.cols(), g.cols()});
          gemm_at_b(a.data().data(), g.data().data(), gb.data().data(), a.rows(), a.cols(),
                    g.cols());
          accumulate(n.inputs[1], gb);
        }
        break;
      }
      case OpKind::Add: {
        if (needs(0)) accumulate(n.inputs[0], g);
        if (needs(1)) accumulate(n.inputs[1], in(1).same_shape(g) ? g : column_sums(g));
        break;
      }
      case OpKind::Mul: {
        const bool bcast = !in(1).same_shape(in(0));
        if (needs(0)) {
          Tensor ga = g;
          const std::size_t nb = in(1).numel();
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= in(1)[bcast ? i % nb : i];
          accumulate(n.inputs[0], ga);
        }
        if (needs(1)) {
          Tensor gb = g;
          for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] *= in(0)[i];
          accumulate(n.inputs[1], bcast ? column_sums(gb) : gb);
        }
        break;
      }
      case OpKind::Tanh: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= 1.0 - y[i] * y[i];
        accumulate(n.inputs[0], ga);
        break;
      }
      case OpKind::Exp: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= y[i];
        accumulate(n.inputs[0], ga);
        break;
      }
      case OpKind::Sum: {
        accumulate(n.inputs[0], Tensor(in(0).shape(), g[0]));
        break;
      }
      case OpKind::Slice: {
        Tensor ga(in(0).shape());
        const std::size_t w = n.attrs.end - n.attrs.begin;
        for (std::size_t i = 0; i < ga.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) ga(i, n.attrs.begin + j) = g(i, j);
        accumulate(n.inputs[0], ga);
        break;
      }
      case OpKind::Concat: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t w = in(k).cols();
          if (needs(k)) accumulate(n.inputs[k], ops::slice(g, offset, offset + w));
          offset += w;
        }
        break;
      }
      case OpKind::Scale: {
        accumulate(n.inputs[0], ops::scale(g, n.attrs.factor));
        break;
      }
    }
  }
}

const Tensor& Graph::grad(const Value& leaf) const {
  if (!consumed_) throw UsageError("grad() before backward()");
  if (leaf.node_ < 0) throw UsageError("grad() of a value that does not require grad");
  return grads_[static_cast<std::size_t>(leaf.node_)];
}

const Tensor* Graph::param_grad(const Tensor& p) const {
  auto it = params_.find(&p);
  if (it == params_.end() || !consumed_) return nullptr;
  return &grads_[static_cast<std::size_t>(it->second.node_)];
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& params,
                        double eps) {
  if (!(eps > 0.0)) throw UsageError("finite_diff_grad: eps must be positive");
  Tensor grad(params.shape());
  Tensor probe = params;
  for (std::size_t i = 0; i < params.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite function value");
    }
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

double relative_error(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("relative_error: shape mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

}  // namespace biaslens
