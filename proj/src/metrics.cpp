#include "biaslens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <Eigen/Dense>

#include "biaslens/errors.hpp"

namespace biaslens {

using nlohmann::json;

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix to_eigen(const Tensor& t) {
  Matrix m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t(i, j);
  return m;
}

Tensor from_eigen(const Matrix& m) {
  Tensor t = Tensor::zeros(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
  return t;
}

Matrix covariance(const Matrix& x, const Vector& mean) {
  const Matrix centered = x.rowwise() - mean.transpose();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Matrix sym_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Stratified half split used by the probes.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> halves(std::span<const int> ys,
                                                                     int num_labels,
                                                                     std::uint64_t seed) {
  std::vector<std::size_t> train, test;
  for (int label = 0; label < num_labels; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (ys[i] == label) idx.push_back(i);
    Rng rng(seed, {0x70726f6265ULL, static_cast<std::uint64_t>(label)});
    rng.shuffle(std::span(idx));
    const std::size_t half = idx.size() / 2;
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

std::vector<std::size_t> rows_with_label(std::span<const int> labels, int label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(i);
  return out;
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// log(sum(exp(v))) of a row of logits, written into probabilities.
double softmax_row(const double* logits, double* probs, Eigen::Index k) {
  double mx = logits[0];
  for (Eigen::Index c = 1; c < k; ++c) mx = std::max(mx, logits[c]);
  double total = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    probs[c] = std::exp(logits[c] - mx);
    total += probs[c];
  }
  for (Eigen::Index c = 0; c < k; ++c) probs[c] /= total;
  return mx + std::log(total);
}

}  // namespace

NormalityStats z_normality(const Tensor& zs) {
  if (zs.rank() != 2 || zs.rows() < 2) throw UsageError("z_normality needs at least two samples");
  const Matrix z = to_eigen(zs);
  const Vector mean = z.colwise().mean();
  const Matrix cov = covariance(z, mean);
  const auto d = static_cast<Eigen::Index>(zs.cols());
  return {mean.norm(), (cov - Matrix::Identity(d, d)).norm()};
}

ProbeResult label_probe(const Tensor& zs, std::span<const int> ys, std::uint64_t seed) {
  if (zs.rank() != 2 || zs.rows() != ys.size()) throw ShapeError("label_probe: rows and labels differ");
  const std::set<int> distinct(ys.begin(), ys.end());
  if (distinct.size() < 2) throw UsageError("label_probe needs at least two distinct labels");
  if (*distinct.begin() < 0) throw LabelError("negative label");
  const int num_labels = *distinct.rbegin() + 1;
  const auto [train, test] = halves(ys, num_labels, seed);
  if (train.empty() || test.empty()) throw UsageError("label_probe: too few samples per label");

  const auto f = static_cast<Eigen::Index>(zs.cols());
  const Eigen::Index k = num_labels;
  const Eigen::Index width = f + 1;

  // Standardize with training-half statistics; column f is the bias input.
  Vector mu = Vector::Zero(f), sd = Vector::Zero(f);
  for (std::size_t i : train)
    for (Eigen::Index j = 0; j < f; ++j) mu(j) += zs(i, static_cast<std::size_t>(j));
  mu /= static_cast<double>(train.size());
  for (std::size_t i : train)
    for (Eigen::Index j = 0; j < f; ++j) {
      const double c = zs(i, static_cast<std::size_t>(j)) - mu(j);
      sd(j) += c * c;
    }
  for (Eigen::Index j = 0; j < f; ++j) {
    sd(j) = std::sqrt(sd(j) / static_cast<double>(train.size()));
    if (!(sd(j) > 1e-12)) sd(j) = 1.0;
  }
  auto design = [&](const std::vector<std::size_t>& rows) {
    Matrix x(static_cast<Eigen::Index>(rows.size()), width);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (Eigen::Index j = 0; j < f; ++j) {
        x(static_cast<Eigen::Index>(r), j) = (zs(rows[r], static_cast<std::size_t>(j)) - mu(j)) / sd(j);
      }
      x(static_cast<Eigen::Index>(r), f) = 1.0;
    }
    return x;
  };
  const Matrix x_train = design(train);
  const Matrix x_test = design(test);

  // Newton's method on mean cross-entropy + (lambda / 2) ||W||^2.
  constexpr double kLambda = 1e-4;
  const double n = static_cast<double>(train.size());
  Matrix w = Matrix::Zero(width, k);
  auto objective = [&](const Matrix& weights, Matrix* probs) {
    const Matrix logits = x_train * weights;
    Matrix p(logits.rows(), k);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::RowVectorXd row = logits.row(i);
      Eigen::RowVectorXd pr(k);
      const double lse = softmax_row(row.data(), pr.data(), k);
      loss += lse - row(ys[train[static_cast<std::size_t>(i)]]);
      p.row(i) = pr;
    }
    if (probs) *probs = std::move(p);
    return loss / n + 0.5 * kLambda * weights.squaredNorm();
  };

  Matrix probs;
  double loss = objective(w, &probs);
  for (int iter = 0; iter < 100; ++iter) {
    Matrix resid = probs;
    for (Eigen::Index i = 0; i < resid.rows(); ++i) resid(i, ys[train[static_cast<std::size_t>(i)]]) -= 1.0;
    const Matrix grad_m = x_train.transpose() * resid / n + kLambda * w;
    const Eigen::Map<const Vector> grad(grad_m.data(), grad_m.size());
    if (grad.norm() < 1e-10) break;

    // Column-major vec(W): entry (j, c) sits at c * width + j.
    Matrix hess = Matrix::Identity(width * k, width * k) * kLambda;
    for (Eigen::Index i = 0; i < x_train.rows(); ++i) {
      const Eigen::RowVectorXd xi = x_train.row(i);
      const Matrix outer = xi.transpose() * xi / n;
      for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) {
          const double coef = probs(i, a) * ((a == b ? 1.0 : 0.0) - probs(i, b));
          hess.block(a * width, b * width, width, width) += coef * outer;
        }
      }
    }
    const Vector step = hess.ldlt().solve(grad);
    double t = 1.0;
    Matrix candidate_probs;
    double candidate = loss;
    Matrix w_next = w;
    for (int ls = 0; ls < 30; ++ls) {
      w_next = w - t * Eigen::Map<const Matrix>(step.data(), width, k);
      candidate = objective(w_next, &candidate_probs);
      if (candidate <= loss - 1e-4 * t * grad.dot(step)) break;
      t *= 0.5;
    }
    if (!(candidate < loss)) break;
    const double improvement = loss - candidate;
    w = w_next;
    loss = candidate;
    probs = std::move(candidate_probs);
    if (improvement < 1e-14) break;
  }

  ProbeResult r;
  r.chance = 1.0 / static_cast<double>(distinct.size());
  std::vector<double> freq(static_cast<std::size_t>(k), 0.0);
  const Matrix logits = x_test * w;
  std::size_t correct = 0;
  double ce = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = ys[test[static_cast<std::size_t>(i)]];
    Eigen::RowVectorXd row = logits.row(i);
    Eigen::RowVectorXd pr(k);
    const double lse = softmax_row(row.data(), pr.data(), k);
    ce += lse - row(y);
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    if (best == y) ++correct;
    freq[static_cast<std::size_t>(y)] += 1.0;
  }
  const double m = static_cast<double>(test.size());
  r.accuracy = static_cast<double>(correct) / m;
  r.test_cross_entropy = ce / m;
  for (double c : freq) {
    if (c > 0) r.label_entropy -= (c / m) * std::log(c / m);
  }
  r.mi_lower_bound = std::max(0.0, r.label_entropy - r.test_cross_entropy);
  return r;
}

double gaussian_w2(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("gaussian_w2: feature dimensions differ");
  }
  const std::size_t d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1) {
    throw UsageError("gaussian_w2 needs at least dim + 1 samples per set");
  }
  const Matrix ma = to_eigen(a), mb = to_eigen(b);
  const Vector mu_a = ma.colwise().mean(), mu_b = mb.colwise().mean();
  const auto dd = static_cast<Eigen::Index>(d);
  const Matrix ridge = 1e-6 * Matrix::Identity(dd, dd);
  const Matrix sa = covariance(ma, mu_a) + ridge;
  const Matrix sb = covariance(mb, mu_b) + ridge;
  const Matrix root_b = sym_sqrt(sb);
  const Matrix cross = root_b * sa * root_b;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cross + cross.transpose()));
  const double cross_trace = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double w2 = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross_trace;
  return std::max(0.0, w2);
}

Tensor quadratic_features(const Tensor& x) {
  const std::size_t d = x.cols();
  const std::size_t width = d + d * (d + 1) / 2;
  Tensor out = Tensor::zeros(x.rows(), width);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < d; ++i) out(r, c++) = x(r, i);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) out(r, c++) = x(r, i) * x(r, j);
  }
  return out;
}

void ContentProbe::fit(const Tensor& features, const Tensor& targets, double ridge) {
  if (features.rows() != targets.rows() || features.rows() < 2) {
    throw ShapeError("content probe: features and targets must have the same rows");
  }
  Matrix x = to_eigen(features);
  Matrix y = to_eigen(targets);
  const Vector fm = x.colwise().mean();
  const Vector tm = y.colwise().mean();
  x.rowwise() -= fm.transpose();
  y.rowwise() -= tm.transpose();
  Vector scale = (x.colwise().squaredNorm() / static_cast<double>(x.rows())).cwiseSqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (!(scale(j) > 1e-12)) scale(j) = 1.0;
  x = x * scale.cwiseInverse().asDiagonal();
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    if (!(y.col(j).squaredNorm() > 0.0)) throw NumericError("content probe: degenerate target column");
  }
  const auto f = x.cols();
  const Matrix gram = x.transpose() * x + ridge * static_cast<double>(x.rows()) * Matrix::Identity(f, f);
  const Matrix w = gram.ldlt().solve(x.transpose() * y);
  feature_mean_ = from_eigen(fm.transpose());
  feature_scale_ = from_eigen(scale.transpose());
  target_mean_ = from_eigen(tm.transpose());
  weights_ = from_eigen(w);
}

Tensor ContentProbe::predict(const Tensor& features) const {
  if (!fitted()) throw UsageError("content probe is not fitted");
  if (features.cols() != weights_.rows()) throw ShapeError("content probe: feature width mismatch");
  Matrix x = to_eigen(features);
  x.rowwise() -= to_eigen(feature_mean_).row(0);
  x = x * to_eigen(feature_scale_).row(0).cwiseInverse().asDiagonal();
  Matrix y = x * to_eigen(weights_);
  y.rowwise() += to_eigen(target_mean_).row(0);
  return from_eigen(y);
}

std::vector<double> r_squared(const Tensor& predicted, const Tensor& actual) {
  if (!predicted.same_shape(actual)) throw ShapeError("r_squared: shape mismatch");
  std::vector<double> out;
  for (std::size_t j = 0; j < actual.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < actual.rows(); ++i) mean += actual(i, j);
    mean /= static_cast<double>(actual.rows());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < actual.rows(); ++i) {
      ss_res += (predicted(i, j) - actual(i, j)) * (predicted(i, j) - actual(i, j));
      ss_tot += (actual(i, j) - mean) * (actual(i, j) - mean);
    }
    if (!(ss_tot > 0.0)) throw NumericError("r_squared: target column has no variance");
    out.push_back(1.0 - ss_res / ss_tot);
  }
  return out;
}

double laplacian_energy(std::span<const double> px) {
  if (px.size() != kPixelCount) throw ShapeError("laplacian_energy expects one 16x16x3 image");
  auto at = [&](std::size_t r, std::size_t c, std::size_t ch) {
    return px[(r * kImageSide + c) * kChannels + ch];
  };
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 1; r + 1 < kImageSide; ++r)
    for (std::size_t c = 1; c + 1 < kImageSide; ++c)
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        const double l = 4.0 * at(r, c, ch) - at(r - 1, c, ch) - at(r + 1, c, ch) -
                         at(r, c - 1, ch) - at(r, c + 1, ch);
        total += l * l;
        ++count;
      }
  return total / static_cast<double>(count);
}

double mean_brightness(std::span<const double> px) { return mean_of(px); }

Tensor style_features(const Tensor& pixels) {
  Tensor out = Tensor::zeros(pixels.rows(), 4);
  for (std::size_t i = 0; i < pixels.rows(); ++i) {
    const auto px = pixels.row(i);
    for (std::size_t p = 0; p < px.size(); ++p) out(i, p % kChannels) += px[p];
    for (std::size_t ch = 0; ch < kChannels; ++ch) out(i, ch) /= static_cast<double>(kImageSide * kImageSide);
    out(i, 3) = std::sqrt(laplacian_energy(px));
  }
  return out;
}

SignTest sign_test(std::span<const double> differences) {
  SignTest t;
  for (double d : differences) {
    if (d > 0) ++t.positive;
    else if (d < 0) ++t.negative;
    else ++t.ties;
  }
  const std::size_t n = t.positive + t.negative;
  if (n == 0) return t;
  const std::size_t k = std::min(t.positive, t.negative);
  // P(X <= k) for X ~ Binomial(n, 1/2), summed in log space.
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    const double log_term = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                            std::lgamma(static_cast<double>(n - i) + 1) - static_cast<double>(n) * std::log(2.0);
    tail += std::exp(log_term);
  }
  t.p_value = std::min(1.0, 2.0 * tail);
  return t;
}

const PairReport& BiasReport::pair(int source, int target) const {
  for (const auto& p : pairs)
    if (p.source == source && p.target == target) return p;
  throw UsageError("no report for dataset pair");
}

json BiasReport::to_json() const {
  auto probe = [](const ProbeResult& p) {
    return json{{"accuracy", p.accuracy},
                {"chance", p.chance},
                {"label_entropy", p.label_entropy},
                {"test_cross_entropy", p.test_cross_entropy},
                {"mi_lower_bound", p.mi_lower_bound}};
  };
  json pair_list = json::array();
  for (const auto& p : pairs) {
    pair_list.push_back({{"source", datasets.at(static_cast<std::size_t>(p.source))},
                         {"target", datasets.at(static_cast<std::size_t>(p.target))},
                         {"count", p.count},
                         {"content_r2", p.content_r2},
                         {"content_r2_mean", p.content_r2_mean},
                         {"w2_to_target", p.w2_to_target},
                         {"w2_to_source", p.w2_to_source},
                         {"laplacian_projected", p.laplacian_projected},
                         {"laplacian_reconstructed", p.laplacian_reconstructed},
                         {"laplacian_sign_test",
                          {{"increase", p.laplacian_change.positive},
                           {"decrease", p.laplacian_change.negative},
                           {"ties", p.laplacian_change.ties},
                           {"p_value", p.laplacian_change.p_value}}}});
  }
  json style_list = json::array();
  for (const auto& s : styles) {
    style_list.push_back({{"dataset", s.name},
                          {"brightness_mean", s.brightness_mean},
                          {"brightness_std", s.brightness_std},
                          {"laplacian_mean", s.laplacian_mean},
                          {"sample_brightness_mean", s.sample_brightness_mean},
                          {"sample_brightness_std", s.sample_brightness_std},
                          {"sample_laplacian_mean", s.sample_laplacian_mean}});
  }
  return json{{"datasets", datasets},
              {"num_samples", num_samples},
              {"nll", nll},
              {"z_mean_norm", z.mean_norm},
              {"z_cov_fro_dist", z.cov_fro_dist},
              {"label_probe", probe(probe_z)},
              {"label_probe_representation", probe(probe_representation)},
              {"z_distance", z_distance},
              {"style_distance", style_distance},
              {"sample_distance", sample_distance},
              {"content_r2_real", content_r2_real},
              {"pairs", pair_list},
              {"styles", style_list}};
}

BiasReport evaluate(const TrainedModel& model, const Dataset& data, const EvalConfig& config) {
  if (data.specs.size() != model.num_labels()) {
    throw UsageError("evaluation data registry does not match the checkpoint");
  }
  for (std::size_t i = 0; i < data.specs.size(); ++i) {
    if (data.specs[i].name != model.registry()[i].name) {
      throw UsageError("evaluation dataset '" + data.specs[i].name + "' does not match checkpoint");
    }
  }
  const int num_labels = static_cast<int>(model.num_labels());
  const std::span<const int> labels(data.labels);

  BiasReport report;
  for (const auto& s : model.registry()) report.datasets.push_back(s.name);
  report.num_samples = data.size();

  const Tensor x = representations(model.ae(), model.stats(), data.pixels);
  const Tensor z = model.flow().forward(x, labels).first;
  report.nll = mean_nll(model.flow(), x, labels);
  report.z = z_normality(z);
  report.probe_z = label_probe(z, labels, config.seed);
  report.probe_representation = label_probe(x, labels, config.seed);

  std::vector<Tensor> z_by_label, real_style;
  for (int l = 0; l < num_labels; ++l) {
    const auto rows = rows_with_label(labels, l);
    z_by_label.push_back(z.gather_rows(rows));
    real_style.push_back(style_features(data.pixels.gather_rows(rows)));
  }
  const auto n_lab = static_cast<std::size_t>(num_labels);
  report.z_distance.assign(n_lab, std::vector<double>(n_lab, 0.0));
  report.style_distance.assign(n_lab, std::vector<double>(n_lab, 0.0));
  for (std::size_t i = 0; i < n_lab; ++i) {
    for (std::size_t j = i + 1; j < n_lab; ++j) {
      report.z_distance[i][j] = report.z_distance[j][i] = gaussian_w2(z_by_label[i], z_by_label[j]);
      report.style_distance[i][j] = report.style_distance[j][i] =
          gaussian_w2(real_style[i], real_style[j]);
    }
  }

  // Content probe: fit on one half of the real data, score the other half.
  const auto [fit_rows, eval_rows] = halves(labels, num_labels, config.seed ^ 0xC0FFEEULL);
  ContentProbe probe;
  probe.fit(quadratic_features(x.gather_rows(fit_rows)), data.content.gather_rows(fit_rows),
            config.probe_ridge);
  report.content_r2_real = r_squared(probe.predict(quadratic_features(x.gather_rows(eval_rows))),
                                     data.content.gather_rows(eval_rows));

  for (int s = 0; s < num_labels; ++s) {
    std::vector<std::size_t> rows;
    for (std::size_t r : eval_rows)
      if (data.labels[r] == s && rows.size() < config.pair_samples) rows.push_back(r);
    const Tensor pixels = data.pixels.gather_rows(rows);
    const Tensor content = data.content.gather_rows(rows);
    const Tensor recon = project(model, pixels, s, s);
    std::vector<double> lap_recon;
    for (std::size_t i = 0; i < recon.rows(); ++i) lap_recon.push_back(laplacian_energy(recon.row(i)));

    for (int t = 0; t < num_labels; ++t) {
      if (t == s) continue;
      PairReport pr;
      pr.source = s;
      pr.target = t;
      pr.count = rows.size();
      const Tensor projected = project(model, pixels, s, t);
      const Tensor feats = quadratic_features(encode_standardized(model, projected));
      pr.content_r2 = r_squared(probe.predict(feats), content);
      pr.content_r2_mean = mean_of(pr.content_r2);
      const Tensor style = style_features(projected);
      pr.w2_to_target = gaussian_w2(style, real_style[static_cast<std::size_t>(t)]);
      pr.w2_to_source = gaussian_w2(style, real_style[static_cast<std::size_t>(s)]);
      std::vector<double> diffs;
      std::vector<double> lap_proj;
      for (std::size_t i = 0; i < projected.rows(); ++i) {
        lap_proj.push_back(laplacian_energy(projected.row(i)));
        diffs.push_back(lap_proj.back() - lap_recon[i]);
      }
      pr.laplacian_projected = mean_of(lap_proj);
      pr.laplacian_reconstructed = mean_of(lap_recon);
      pr.laplacian_change = sign_test(diffs);
      report.pairs.push_back(std::move(pr));
    }
  }

  report.sample_distance.assign(n_lab, std::vector<double>(n_lab, 0.0));
  for (int l = 0; l < num_labels; ++l) {
    DatasetStyle st;
    st.name = report.datasets[static_cast<std::size_t>(l)];
    std::vector<double> bright, lap;
    for (std::size_t r : rows_with_label(labels, l)) {
      bright.push_back(mean_brightness(data.pixels.row(r)));
      lap.push_back(laplacian_energy(data.pixels.row(r)));
    }
    st.brightness_mean = mean_of(bright);
    st.brightness_std = std_of(bright);
    st.laplacian_mean = mean_of(lap);

    const Tensor samples = sample(model, l, config.sample_count, config.seed);
    std::vector<double> sbright, slap;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
      sbright.push_back(mean_brightness(samples.row(i)));
      slap.push_back(laplacian_energy(samples.row(i)));
    }
    st.sample_brightness_mean = mean_of(sbright);
    st.sample_brightness_std = std_of(sbright);
    st.sample_laplacian_mean = mean_of(slap);
    report.styles.push_back(std::move(st));

    const Tensor sample_style = style_features(samples);
    for (std::size_t j = 0; j < n_lab; ++j) {
      report.sample_distance[static_cast<std::size_t>(l)][j] = gaussian_w2(sample_style, real_style[j]);
    }
  }
  return report;
}

void write_report(const std::filesystem::path& path, const BiasReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << report.to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_distance_csv(const std::filesystem::path& path, std::span<const std::string> names,
                        const std::vector<std::vector<double>>& matrix) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "dataset";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << names[i];
    for (double v : matrix[i]) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace biaslens
