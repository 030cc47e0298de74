#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biaslens/tensor.hpp"

namespace biaslens {

enum class OpKind { MatMul, Add, Mul, Tanh, Exp, Sum, Slice, Concat, Scale };

std::string_view op_name(OpKind kind);

/// Extra arguments for the ops that need them.
struct OpAttrs {
  double factor = 1.0;        // Scale
  std::size_t begin = 0;      // Slice: column range [begin, end)
  std::size_t end = 0;
};

/// Evaluates one op on plain tensors without recording anything.
///
/// Shapes: MatMul (m x k)(k x n); Add/Mul take equal shapes or a 1 x n right
/// operand broadcast over rows; Sum reduces everything to 1x1; Slice and
/// Concat work on columns of rank-2 tensors. Throws ShapeError on mismatch and
/// NumericError when the result is not finite.
Tensor forward_op(OpKind kind, std::span<const Tensor* const> inputs, const OpAttrs& attrs = {});

namespace ops {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor* const> parts);
Tensor scale(const Tensor& a, double factor);
}  // namespace ops

class Graph;

/// Handle to a tensor inside a Graph computation. A Value either refers to a
/// recorded node (it depends on some leaf that requires grad) or is a constant
/// that never enters the tape.
class Value {
 public:
  Value() = default;

  const Tensor& value() const { return *data_; }
  const Shape& shape() const { return data_->shape(); }
  std::size_t rows() const { return data_->rows(); }
  std::size_t cols() const { return data_->cols(); }
  bool requires_grad() const { return node_ >= 0; }
  bool valid() const { return data_ != nullptr; }

 private:
  friend class Graph;
  Value(std::shared_ptr<const Tensor> data, int node) : data_(std::move(data)), node_(node) {}

  std::shared_ptr<const Tensor> data_;
  int node_ = -1;
};

/// Reverse-mode tape. Ops are appended in execution order, which is a
/// topological order by construction; backward walks it once in reverse.
/// A graph with no leaves records nothing, so the same model code serves
/// inference and training.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Value constant(Tensor t) const;
  Value leaf(Tensor t);

  /// Model parameters: a leaf when parameter tracking is on, else a constant.
  /// Repeated calls with the same tensor return the same leaf.
  Value param(const Tensor& p);
  void track_params(bool on) { track_params_ = on; }

  Value apply(OpKind kind, std::span<const Value> inputs, const OpAttrs& attrs = {});

  Value matmul(const Value& a, const Value& b);
  Value add(const Value& a, const Value& b);
  Value sub(const Value& a, const Value& b);
  Value mul(const Value& a, const Value& b);
  Value tanh(const Value& a);
  Value exp(const Value& a);
  Value sum(const Value& a);
  Value slice(const Value& a, std::size_t begin, std::size_t end);
  Value concat(std::span<const Value> parts);
  Value scale(const Value& a, double factor);

  /// Populates gradients of `loss` (a single-element value) w.r.t. every leaf.
  void backward(const Value& loss);

  /// d(loss)/d(leaf) after backward; zeros for leaves the loss does not reach.
  const Tensor& grad(const Value& leaf) const;
  /// Gradient for a tensor previously bound through param(), or nullptr.
  const Tensor* param_grad(const Tensor& p) const;

  std::size_t num_records() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    bool is_leaf = false;
    OpKind kind = OpKind::Add;
    OpAttrs attrs;
    std::vector<int> inputs;  // -1 for constants
    std::vector<std::shared_ptr<const Tensor>> input_values;
    std::shared_ptr<const Tensor> output;
  };

  void accumulate(int node, const Tensor& g);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Tensor*, Value> params_;
  bool track_params_ = false;
  bool consumed_ = false;
};

/// Central differences (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) per entry.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& params,
                        double eps);

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
double relative_error(const Tensor& a, const Tensor& b);

}  // namespace biaslens
