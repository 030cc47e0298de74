#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "biaslens/errors.hpp"
#include "biaslens/flow.hpp"

using namespace biaslens;

namespace {

FlowConfig small_config(std::size_t dim, std::size_t blocks = 4, std::size_t labels = 3) {
  FlowConfig c;
  c.dim = dim;
  c.num_labels = labels;
  c.embed_dim = 3;
  c.num_blocks = blocks;
  c.hidden = 8;
  return c;
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double s = 1.0) {
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.data()) v = s * rng.normal();
  return t;
}

// Every trainable parameter random, actnorm marked initialized, so the test
// covers states an optimizer could reach.
FlowModel random_flow(const FlowConfig& c, std::uint64_t seed, bool with_output = true) {
  Rng rng(seed);
  FlowModel m(c, rng);
  for (auto& p : m.parameters())
    for (double& v : p.tensor->data()) v = 0.5 * rng.normal();
  for (auto& b : m.blocks()) b.actnorm.initialized = true;
  if (with_output) {
    for (std::size_t l = 0; l < c.num_labels; ++l) {
      Tensor a = random_tensor(c.dim, c.dim, rng, 0.3);
      for (std::size_t i = 0; i < c.dim; ++i) a(i, i) += 1.0;
      m.set_output_affine(static_cast<int>(l), random_tensor(1, c.dim, rng), a);
    }
  }
  return m;
}

Tensor row(const Tensor& t, std::size_t i) { return t.slice_rows(i, i + 1); }

double numeric_logdet(const FlowModel& m, const Tensor& x, int y) {
  const std::size_t d = x.cols();
  const double eps = 1e-6;
  Eigen::MatrixXd jac(d, d);
  const int labels[] = {y};
  for (std::size_t j = 0; j < d; ++j) {
    Tensor hi = x, lo = x;
    hi[j] += eps;
    lo[j] -= eps;
    const Tensor zh = m.forward(hi, labels).first, zl = m.forward(lo, labels).first;
    for (std::size_t i = 0; i < d; ++i) jac(i, j) = (zh[i] - zl[i]) / (2 * eps);
  }
  return std::log(std::abs(jac.determinant()));
}

}  // namespace

TEST_CASE("identity flow") {
  const FlowModel m = FlowModel::identity(small_config(4));
  Rng rng(1);
  const Tensor x = random_tensor(10, 4, rng);
  const std::vector<int> y(10, 1);
  const auto [z, logdet] = m.forward(x, y);
  CHECK(z == x);
  for (double v : logdet.data()) CHECK(v == 0.0);
  CHECK(m.inverse(x, y) == x);
}

TEST_CASE("log_prob of the identity flow") {
  const int y[] = {0};
  CHECK(FlowModel::identity(small_config(2)).log_prob(Tensor::zeros(1, 2), y).item() ==
        doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK(FlowModel::identity(small_config(1)).log_prob(Tensor::matrix({{1.0}}), y).item() ==
        doctest::Approx(-1.418939).epsilon(1e-6));
  const double exact = -std::log(2 * std::numbers::pi);
  CHECK(std::abs(FlowModel::identity(small_config(2)).log_prob(Tensor::zeros(1, 2), y).item() - exact) < 1e-14);
}

TEST_CASE("analytic logdet matches the finite-difference Jacobian") {
  for (std::size_t d : {1u, 2u, 3u, 5u, 6u}) {
    for (bool with_output : {false, true}) {
      const FlowModel m = random_flow(small_config(d), 100 + d, with_output);
      Rng rng(d);
      for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor(1, d, rng);
        const int y = static_cast<int>(rng.below(3));
        const int labels[] = {y};
        const double analytic = m.forward(x, labels).second.item();
        const double numeric = numeric_logdet(m, x, y);
        INFO("d=", d, " output=", with_output);
        CHECK(std::abs(std::exp(analytic) - std::exp(numeric)) / std::exp(analytic) < 1e-4);
      }
    }
  }
}

TEST_CASE("round trips are exact to 1e-9") {
  const FlowConfig c = small_config(6, 8);
  const FlowModel m = random_flow(c, 7);
  Rng rng(2);
  const Tensor x = random_tensor(100, 6, rng);
  std::vector<int> y(100);
  for (auto& v : y) v = static_cast<int>(rng.below(3));
  CHECK(max_abs_diff(m.inverse(m.forward(x, y).first, y), x) < 1e-9);
  const Tensor z = random_tensor(100, 6, rng);
  CHECK(max_abs_diff(m.forward(m.inverse(z, y), y).first, z) < 1e-9);
}

TEST_CASE("round trip at clamp-saturating scales") {
  FlowConfig c = small_config(4, 6);
  FlowModel m = random_flow(c, 8);
  // Large raw scale outputs push every s term into the clamp; the
  // translation half is left alone.
  for (auto& b : m.blocks()) {
    Tensor& w = b.coupling.out.weight;
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t k = 0; k < b.coupling.active_width(); ++k) w(r, k) *= 20.0;
  }
  Rng rng(3);
  const Tensor x = random_tensor(50, 4, rng, 0.2);
  std::vector<int> y(50, 2);
  const Tensor z = m.forward(x, y).first;
  REQUIRE(z.all_finite());
  CHECK(max_abs_diff(m.inverse(z, y), x) / std::max(1.0, max_abs_diff(x, Tensor::zeros(50, 4))) < 1e-9);
}

TEST_CASE("changing the label changes z") {
  const FlowModel m = random_flow(small_config(4), 9, false);
  const Tensor x = Tensor::matrix({{0.3, -0.1, 0.8, 0.0}});
  const int a[] = {0}, b[] = {1};
  CHECK(max_abs_diff(m.forward(x, a).first, m.forward(x, b).first) > 1e-6);
}

TEST_CASE("batch rows are independent") {
  const FlowModel m = random_flow(small_config(4), 10);
  Rng rng(4);
  const Tensor x = random_tensor(9, 4, rng);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1, 2};
  const Tensor z = m.forward(x, y).first;
  for (std::size_t i = 0; i < 9; ++i) {
    const int yi[] = {y[i]};
    CHECK(m.forward(row(x, i), yi).first == row(z, i));
  }
}

TEST_CASE("actnorm data init standardizes every actnorm input") {
  const FlowConfig c = small_config(5, 4);
  Rng rng(11);
  FlowModel m(c, rng);
  // Nonzero conditioners so later blocks see non-trivially transformed data.
  for (auto& b : m.blocks())
    for (double& v : b.coupling.out.weight.data()) v = 0.3 * rng.normal();
  Tensor x = random_tensor(64, 5, rng);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 5; ++j) x(i, j) = 3.0 * x(i, j) + static_cast<double>(j);
  std::vector<int> y(64);
  for (std::size_t i = 0; i < 64; ++i) y[i] = static_cast<int>(i % 3);
  CHECK_FALSE(m.initialized());
  CHECK_THROWS_AS(m.forward(x, y), UsageError);
  m.actnorm_data_init(x, y);
  CHECK(m.initialized());

  for (std::size_t k = 0; k < c.num_blocks; ++k) {
    // Input of block k: the first k blocks applied to x.
    Tensor h = x;
    if (k > 0) {
      FlowModel prefix = m;
      prefix.blocks().resize(k);
      h = prefix.forward(x, y).first;
    }
    const ActNorm& an = m.blocks()[k].actnorm;
    for (std::size_t j = 0; j < 5; ++j) {
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < 64; ++i) mean += (h(i, j) + an.bias[j]) * std::exp(an.log_scale[j]);
      mean /= 64;
      for (std::size_t i = 0; i < 64; ++i) {
        const double v = (h(i, j) + an.bias[j]) * std::exp(an.log_scale[j]) - mean;
        var += v * v;
      }
      const double sd = std::sqrt(var / 64);
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(sd - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(m.actnorm_data_init(x, y), UsageError);

  FlowModel fresh(c, rng);
  CHECK_THROWS_AS(fresh.actnorm_data_init(Tensor::full(8, 5, 2.0), std::vector<int>(8, 0)), NumericError);
}

TEST_CASE("permutation-only model") {
  FlowModel m = FlowModel::identity(small_config(6, 3));
  Rng rng(12);
  for (auto& b : m.blocks()) {
    std::vector<std::size_t> p(6);
    for (std::size_t i = 0; i < 6; ++i) p[i] = i;
    rng.shuffle(std::span(p));
    b.permutation = p;
  }
  const Tensor x = random_tensor(20, 6, rng);
  const std::vector<int> y(20, 0);
  const auto [z, logdet] = m.forward(x, y);
  for (double v : logdet.data()) CHECK(v == 0.0);
  for (std::size_t i = 0; i < 20; ++i) {
    std::vector<double> a(x.row(i).begin(), x.row(i).end()), b(z.row(i).begin(), z.row(i).end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  CHECK(z != x);
}

TEST_CASE("permutation helpers") {
  const std::size_t perm[] = {2, 0, 1};
  CHECK(is_permutation(perm));
  const std::size_t bad[] = {0, 0, 1};
  CHECK_FALSE(is_permutation(bad));
  const Tensor x = Tensor::matrix({{10, 20, 30}});
  CHECK(ops::matmul(x, permutation_matrix(perm)) == Tensor::matrix({{30, 10, 20}}));
}

TEST_CASE("unregistered labels") {
  const FlowModel m = FlowModel::identity(small_config(2, 2, 2));
  const int bad[] = {2};
  const int neg[] = {-1};
  CHECK_THROWS_AS(m.forward(Tensor::zeros(1, 2), bad), LabelError);
  CHECK_THROWS_AS(m.inverse(Tensor::zeros(1, 2), neg), LabelError);
  CHECK_THROWS_AS(m.log_prob(Tensor::zeros(1, 2), bad), LabelError);
}

TEST_CASE("output map fit whitens each label") {
  const FlowModel base = random_flow(small_config(3, 2, 2), 13, false);
  Rng rng(14);
  const std::size_t n = 400;
  Tensor x = Tensor::zeros(n, 3);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    for (std::size_t j = 0; j < 3; ++j) x(i, j) = (y[i] ? 2.0 : 0.5) * rng.normal() + y[i] + 0.3 * j;
  }
  FlowModel m = base;
  const double before = -[&] {
    double s = 0;
    for (double v : m.log_prob(x, y).data()) s += v;
    return s / n;
  }();
  m.fit_output_affine(x, y);
  const Tensor z = m.forward(x, y).first;
  for (int l = 0; l < 2; ++l) {
    Eigen::MatrixXd zl(n / 2, 3);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (y[i] == l) {
        for (std::size_t j = 0; j < 3; ++j) zl(r, j) = z(i, j);
        ++r;
      }
    const Eigen::RowVectorXd mean = zl.colwise().mean();
    const Eigen::MatrixXd c = zl.rowwise() - mean;
    const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(n / 2);
    CHECK(mean.norm() < 1e-9);
    CHECK((cov - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-9);
    // Symmetric whitening: the matrix equals its transpose.
    const Tensor& w = m.output_affine(l).matrix;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(w(i, j) == doctest::Approx(w(j, i)).epsilon(1e-12));
  }
  double after = 0;
  for (double v : m.log_prob(x, y).data()) after -= v;
  CHECK(after / n <= before + 1e-9);
  CHECK(max_abs_diff(m.inverse(z, y), x) < 1e-9);

  CHECK_THROWS_AS(m.set_output_affine(0, Tensor::zeros(1, 3), Tensor::zeros(3, 3)), UsageError);
  CHECK_THROWS_AS(m.set_output_affine(5, Tensor::zeros(1, 3), Tensor::identity(3)), LabelError);
  CHECK_THROWS_AS(m.fit_output_affine(x.slice_rows(0, 6), std::span(y).subspan(0, 6)), UsageError);
  m.reset_output_affine();
  CHECK(m.forward(x, y).first == base.forward(x, y).first);
}
