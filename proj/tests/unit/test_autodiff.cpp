#include "doctest.h"

#include <cmath>
#include <vector>

#include "biaslens/autodiff.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/rng.hpp"

using namespace biaslens;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double s = 1.0) {
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.data()) v = s * rng.normal();
  return t;
}

// Scalar objective sum(op(...) * probe): the random probe weights every output
// entry differently, so each partial derivative is exercised.
struct OpCase {
  OpKind kind;
  std::vector<Tensor> inputs;
  OpAttrs attrs;
};

double objective(const OpCase& c, const std::vector<Tensor>& inputs, const Tensor& probe) {
  std::vector<const Tensor*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  const Tensor out = forward_op(c.kind, ptrs, c.attrs);
  double s = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * probe[i];
  return s;
}

void check_gradients(const OpCase& c, Rng& rng) {
  std::vector<const Tensor*> ptrs;
  for (const auto& t : c.inputs) ptrs.push_back(&t);
  const Tensor out = forward_op(c.kind, ptrs, c.attrs);
  const Tensor probe = random_tensor(out.rows(), out.cols(), rng);

  Graph g;
  std::vector<Value> leaves;
  for (const auto& t : c.inputs) leaves.push_back(g.leaf(t));
  const Value y = g.apply(c.kind, leaves, c.attrs);
  const Value loss = g.sum(g.mul(y, g.constant(probe)));
  g.backward(loss);

  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    auto f = [&](const Tensor& p) {
      std::vector<Tensor> in = c.inputs;
      in[k] = p;
      return objective(c, in, probe);
    };
    const Tensor fd = finite_diff_grad(f, c.inputs[k], 1e-6);
    INFO(op_name(c.kind), " input ", k);
    CHECK(relative_error(g.grad(leaves[k]), fd) < 1e-6);
  }
}

}  // namespace

TEST_CASE("forward examples") {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(ops::matmul(m, Tensor::identity(2)) == m);
  CHECK(ops::tanh(Tensor::zeros(3, 2)) == Tensor::zeros(3, 2));
  const Tensor a = Tensor::matrix({{1, 2}});
  const Tensor b = Tensor::matrix({{3}});
  const Tensor* parts[] = {&a, &b};
  CHECK(ops::sum(ops::concat(parts)).item() == 6.0);
}

TEST_CASE("forward values against hand computation") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  CHECK(ops::matmul(a, b) == Tensor::matrix({{19, 22}, {43, 50}}));
  CHECK(ops::add(a, Tensor::matrix({{10, 20}})) == Tensor::matrix({{11, 22}, {13, 24}}));
  CHECK(ops::mul(a, b) == Tensor::matrix({{5, 12}, {21, 32}}));
  CHECK(ops::scale(a, -0.5) == Tensor::matrix({{-0.5, -1}, {-1.5, -2}}));
  CHECK(ops::slice(a, 1, 2) == Tensor::matrix({{2}, {4}}));
  CHECK(ops::exp(Tensor::scalar(1.0)).item() == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("forward errors") {
  CHECK_THROWS_AS(ops::matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), ShapeError);
  CHECK_THROWS_AS(ops::add(Tensor::zeros(2, 3), Tensor::zeros(3, 2)), ShapeError);
  CHECK_THROWS_AS(ops::mul(Tensor::zeros(2, 3), Tensor::zeros(2, 1)), ShapeError);
  CHECK_THROWS_AS(ops::slice(Tensor::zeros(2, 3), 2, 4), ShapeError);
  CHECK_THROWS_AS(ops::exp(Tensor::scalar(1000.0)), NumericError);
  const Tensor a = Tensor::zeros(2, 1), b = Tensor::zeros(3, 1);
  const Tensor* parts[] = {&a, &b};
  CHECK_THROWS_AS(ops::concat(parts), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("grad of sum(w * x) is x") {
    Graph g;
    const Tensor x = Tensor::matrix({{1, -2, 3}, {0.5, 4, -1}});
    const Value w = g.leaf(Tensor::full(2, 3, 0.7));
    g.backward(g.sum(g.mul(w, g.constant(x))));
    CHECK(g.grad(w) == x);
  }
  SUBCASE("grad of sum(tanh(w)) at 0 is ones") {
    Graph g;
    const Value w = g.leaf(Tensor::zeros(3, 4));
    g.backward(g.sum(g.tanh(w)));
    CHECK(g.grad(w) == Tensor::full(3, 4, 1.0));
  }
}

TEST_CASE("two-layer MLP gradient matches finite differences") {
  Rng rng(5);
  const Tensor x = random_tensor(6, 5, rng);
  const Tensor w1 = random_tensor(5, 7, rng, 0.5), b1 = random_tensor(1, 7, rng, 0.1);
  const Tensor w2 = random_tensor(7, 3, rng, 0.5), b2 = random_tensor(1, 3, rng, 0.1);
  const Tensor target = random_tensor(6, 3, rng);

  auto loss_of = [&](Graph& g, const Value& W1, const Value& B1, const Value& W2, const Value& B2) {
    const Value h = g.tanh(g.add(g.matmul(g.constant(x), W1), B1));
    const Value out = g.add(g.matmul(h, W2), B2);
    const Value r = g.sub(out, g.constant(target));
    return g.scale(g.sum(g.mul(r, r)), 0.5);
  };

  Graph g;
  const Value W1 = g.leaf(w1), B1 = g.leaf(b1), W2 = g.leaf(w2), B2 = g.leaf(b2);
  g.backward(loss_of(g, W1, B1, W2, B2));

  auto eval = [&](const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& d) {
    Graph h;
    return loss_of(h, h.constant(a), h.constant(b), h.constant(c), h.constant(d)).value().item();
  };
  CHECK(relative_error(g.grad(W1), finite_diff_grad([&](const Tensor& p) { return eval(p, b1, w2, b2); }, w1, 1e-6)) < 1e-6);
  CHECK(relative_error(g.grad(B1), finite_diff_grad([&](const Tensor& p) { return eval(w1, p, w2, b2); }, b1, 1e-6)) < 1e-6);
  CHECK(relative_error(g.grad(W2), finite_diff_grad([&](const Tensor& p) { return eval(w1, b1, p, b2); }, w2, 1e-6)) < 1e-6);
  CHECK(relative_error(g.grad(B2), finite_diff_grad([&](const Tensor& p) { return eval(w1, b1, w2, p); }, b2, 1e-6)) < 1e-6);
}

TEST_CASE("every op kind at random shapes up to 8x8") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 1 + rng.below(8), k = 1 + rng.below(8), n = 1 + rng.below(8);
    check_gradients({OpKind::MatMul, {random_tensor(m, k, rng), random_tensor(k, n, rng)}, {}}, rng);
    check_gradients({OpKind::Add, {random_tensor(m, n, rng), random_tensor(m, n, rng)}, {}}, rng);
    check_gradients({OpKind::Add, {random_tensor(m, n, rng), random_tensor(1, n, rng)}, {}}, rng);
    check_gradients({OpKind::Mul, {random_tensor(m, n, rng), random_tensor(m, n, rng)}, {}}, rng);
    check_gradients({OpKind::Mul, {random_tensor(m, n, rng), random_tensor(1, n, rng)}, {}}, rng);
    check_gradients({OpKind::Tanh, {random_tensor(m, n, rng)}, {}}, rng);
    check_gradients({OpKind::Exp, {random_tensor(m, n, rng)}, {}}, rng);
    check_gradients({OpKind::Sum, {random_tensor(m, n, rng)}, {}}, rng);
    const std::size_t b = rng.below(n), e = b + 1 + rng.below(n - b);
    check_gradients({OpKind::Slice, {random_tensor(m, n, rng)}, {1.0, b, e}}, rng);
    check_gradients({OpKind::Concat, {random_tensor(m, k, rng), random_tensor(m, n, rng), random_tensor(m, 1, rng)}, {}}, rng);
    check_gradients({OpKind::Scale, {random_tensor(m, n, rng)}, {-1.7, 0, 0}}, rng);
  }
}

TEST_CASE("reused values accumulate gradients") {
  Graph g;
  const Value p = g.leaf(Tensor::scalar(3.0));
  g.backward(g.mul(p, p));
  CHECK(g.grad(p).item() == doctest::Approx(6.0));
}

TEST_CASE("backward errors") {
  SUBCASE("twice on the same graph") {
    Graph g;
    const Value w = g.leaf(Tensor::scalar(1.0));
    const Value loss = g.scale(w, 2.0);
    g.backward(loss);
    CHECK(g.consumed());
    CHECK_THROWS_AS(g.backward(loss), UsageError);
  }
  SUBCASE("non-scalar loss") {
    Graph g;
    const Value w = g.leaf(Tensor::zeros(2, 2));
    CHECK_THROWS_AS(g.backward(g.tanh(w)), ShapeError);
  }
}

TEST_CASE("no-grad path records nothing") {
  Graph g;
  const Value a = g.constant(Tensor::matrix({{1, 2}}));
  const Value b = g.param(Tensor::matrix({{3, 4}}));
  const Value y = g.sum(g.tanh(g.mul(a, b)));
  CHECK_FALSE(y.requires_grad());
  CHECK(g.num_records() == 0);
  CHECK(y.value().item() == doctest::Approx(std::tanh(3.0) + std::tanh(8.0)));
}

TEST_CASE("param binds one leaf per tensor when tracking") {
  Graph g;
  g.track_params(true);
  const Tensor w = Tensor::matrix({{2.0}});
  const Value a = g.param(w);
  const Value b = g.param(w);
  g.backward(g.sum(g.add(a, b)));
  REQUIRE(g.param_grad(w) != nullptr);
  CHECK(g.param_grad(w)->item() == 2.0);
  const Tensor other = Tensor::scalar(1.0);
  CHECK(g.param_grad(other) == nullptr);
}

TEST_CASE("determinism of values and gradients") {
  auto run = [] {
    Rng rng(99);
    const Tensor x = random_tensor(4, 3, rng), w = random_tensor(3, 2, rng);
    Graph g;
    const Value W = g.leaf(w);
    const Value loss = g.sum(g.exp(g.tanh(g.matmul(g.constant(x), W))));
    g.backward(loss);
    return std::pair{loss.value(), g.grad(W)};
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("finite_diff_grad examples") {
  const Tensor p = Tensor::scalar(3.0);
  const Tensor d = finite_diff_grad([](const Tensor& t) { return t.item() * t.item(); }, p, 1e-5);
  CHECK(std::abs(d.item() - 6.0) < 1e-6);
  const Tensor q = Tensor::matrix({{1.5, -2, 7}, {0, 3, 1}});
  const Tensor ones = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0;
        for (double v : t.data()) s += v;
        return s;
      },
      q, 1e-5);
  for (double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return NAN; }, p, 1e-5), NumericError);
  CHECK_THROWS(finite_diff_grad([](const Tensor& t) { return t.item(); }, p, 0.0));
}
