#include "usca/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "usca/error.hpp"

namespace usca {

Matrix CcaResult::transform1(const Matrix& x1) const {
  return (x1.rowwise() - mean1) * q1.transpose();
}

Matrix CcaResult::transform2(const Matrix& x2) const {
  return (x2.rowwise() - mean2) * q2.transpose();
}

CcaResult cca_fit(const Matrix& x1, const Matrix& x2, std::size_t d_shared, double rank_tol) {
  if (x1.rows() != x2.rows()) throw DimensionError("cca_fit: views have different row counts");
  if (d_shared == 0) throw ValidationError("cca_fit: d_shared must be >= 1");
  const auto n = static_cast<std::size_t>(x1.rows());
  const std::size_t needed = static_cast<std::size_t>(x1.cols() + x2.cols()) - std::min<std::size_t>(d_shared, static_cast<std::size_t>(x1.cols() + x2.cols()));
  if (n < needed || n < 2)
    throw RankError("cca_fit: " + std::to_string(n) + " aligned pairs, need at least " +
                    std::to_string(std::max<std::size_t>(needed, 2)));
  CcaResult r;
  r.mean1 = column_means(x1);
  r.mean2 = column_means(x2);
  const Matrix c1 = x1.rowwise() - r.mean1;
  const Matrix c2 = x2.rowwise() - r.mean2;
  const Matrix w1 = spectral_whitening(empirical_covariance(c1, false), rank_tol);
  const Matrix w2 = spectral_whitening(empirical_covariance(c2, false), rank_tol);
  if (static_cast<std::size_t>(std::min(w1.rows(), w2.rows())) < d_shared)
    throw RankError("cca_fit: covariance rank below d_shared");
  const Matrix z1 = c1 * w1.transpose();
  const Matrix z2 = c2 * w2.transpose();
  const Eigen::MatrixXd cross = z1.transpose() * z2 / static_cast<double>(n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto dc = static_cast<Index>(d_shared);
  r.q1 = svd.matrixU().leftCols(dc).transpose() * w1;
  r.q2 = svd.matrixV().leftCols(dc).transpose() * w2;
  r.correlations = svd.singularValues().head(dc);
  return r;
}

namespace {

// (W W')^{-1/2} W
Matrix symmetric_decorrelation(const Matrix& w) {
  const SymEig e = sym_eig((w * w.transpose() + (w * w.transpose()).transpose()) * 0.5);
  const Vector inv = e.values.cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  return e.vectors * inv.asDiagonal() * e.vectors.transpose() * w;
}

}  // namespace

IcaResult fastica(const Matrix& x, std::size_t k, Rng& rng, const FastIcaOptions& opts) {
  if (k == 0) throw ValidationError("fastica: k must be >= 1");
  if (static_cast<std::size_t>(x.rows()) < 10 * k)
    throw DimensionError("fastica: need at least 10 rows per component");
  if (k > static_cast<std::size_t>(x.cols())) throw DimensionError("fastica: k exceeds dimension");
  IcaResult r;
  r.mean = column_means(x);
  const Matrix xc = x.rowwise() - r.mean;
  const Matrix wfull = spectral_whitening(empirical_covariance(xc, false));
  if (static_cast<std::size_t>(wfull.rows()) < k)
    throw DegenerateCovarianceError("fastica: covariance rank below k");
  const Matrix wh = wfull.topRows(static_cast<Index>(k));
  const Matrix z = xc * wh.transpose();  // N x k, white
  const double n = static_cast<double>(z.rows());

  Matrix w = symmetric_decorrelation(rng.normal_matrix(static_cast<Index>(k), static_cast<Index>(k)));
  for (r.iterations = 1; r.iterations <= opts.max_iter; ++r.iterations) {
    const Matrix y = z * w.transpose();                  // N x k
    const Matrix g = y.array().tanh().matrix();
    const RowVector gp = (1.0 - g.array().square()).matrix().colwise().mean();
    Matrix next = g.transpose() * z / n - gp.transpose().asDiagonal() * w;
    next = symmetric_decorrelation(next);
    const double change = ((next * w.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    w = next;
    if (change < opts.tol) {
      r.converged = true;
      break;
    }
  }
  r.iterations = std::min(r.iterations, opts.max_iter);
  r.unmixing = w * wh;
  r.sources = xc * r.unmixing.transpose();
  // re-standardize against round-off so variances are exactly 1
  for (Index j = 0; j < r.sources.cols(); ++j) {
    const double sd = std::sqrt(r.sources.col(j).squaredNorm() / n);
    r.sources.col(j) /= sd;
    r.unmixing.row(j) /= sd;
  }
  return r;
}

double ks_statistic(const Vector& a, const Vector& b) {
  if (a.size() == 0 || b.size() == 0) throw DimensionError("ks_statistic: empty sample");
  std::vector<double> x(a.data(), a.data() + a.size());
  std::vector<double> y(b.data(), b.data() + b.size());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double t = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= t) ++i;
    while (j < y.size() && y[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return d;
}

namespace {

// Hungarian algorithm with potentials on a square matrix; returns the column
// assigned to each row.
std::vector<std::size_t> hungarian_square(const Matrix& a) {
  const auto n = static_cast<std::size_t>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(static_cast<Index>(i0 - 1), static_cast<Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> min_cost_assignment(const Matrix& cost,
                                                                     std::size_t count) {
  const auto r = static_cast<std::size_t>(cost.rows());
  const auto c = static_cast<std::size_t>(cost.cols());
  if (count > std::min(r, c))
    throw ValidationError("min_cost_assignment: cannot select " + std::to_string(count) +
                          " pairs from a " + std::to_string(r) + "x" + std::to_string(c) + " matrix");
  if (!cost.allFinite()) throw ValidationError("min_cost_assignment: non-finite cost");
  if (count == 0) return {};
  // Rows: r real + (c - count) dummy. Columns: c real + (r - count) dummy.
  // Dummy rows must take real columns, so exactly `count` real pairs remain.
  const std::size_t n = r + c - count;
  const double big = 1.0 + (cost.cwiseAbs().maxCoeff() + 1.0) * static_cast<double>(n) * 4.0;
  Matrix a = Matrix::Zero(static_cast<Index>(n), static_cast<Index>(n));
  a.topLeftCorner(static_cast<Index>(r), static_cast<Index>(c)) = cost;
  a.bottomRightCorner(static_cast<Index>(c - count), static_cast<Index>(r - count)).setConstant(big);
  const auto assign = hungarian_square(a);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < r; ++i)
    if (assign[i] < c) out.emplace_back(i, assign[i]);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> min_cost_assignment(const Matrix& cost) {
  return min_cost_assignment(cost, static_cast<std::size_t>(std::min(cost.rows(), cost.cols())));
}

IcaMatchResult ica_match(const Matrix& x1, const Matrix& x2, std::size_t d_shared, Rng& rng) {
  IcaMatchResult out;
  out.c1.resize(x1.rows(), 0);
  out.c2.resize(x2.rows(), 0);
  if (d_shared == 0) return out;
  Rng r1 = rng.substream("ica_match/view1");
  Rng r2 = rng.substream("ica_match/view2");
  out.ica1 = fastica(x1, static_cast<std::size_t>(x1.cols()), r1);
  out.ica2 = fastica(x2, static_cast<std::size_t>(x2.cols()), r2);
  const Matrix& s1 = out.ica1.sources;
  const Matrix& s2 = out.ica2.sources;
  if (static_cast<std::size_t>(std::min(s1.cols(), s2.cols())) < d_shared)
    throw ValidationError("ica_match: fewer recovered components than d_shared");

  Matrix cost(s1.cols(), s2.cols());
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> flip(s1.cols(), s2.cols());
  for (Index i = 0; i < s1.cols(); ++i) {
    for (Index j = 0; j < s2.cols(); ++j) {
      const double same = ks_statistic(s1.col(i), s2.col(j));
      const double flipped = ks_statistic(s1.col(i), -s2.col(j));
      cost(i, j) = std::min(same, flipped);
      flip(i, j) = flipped < same;
    }
  }
  out.pairs = min_cost_assignment(cost, d_shared);
  out.c1.resize(s1.rows(), static_cast<Index>(d_shared));
  out.c2.resize(s2.rows(), static_cast<Index>(d_shared));
  for (std::size_t m = 0; m < out.pairs.size(); ++m) {
    const auto [i, j] = out.pairs[m];
    const auto ii = static_cast<Index>(i), jj = static_cast<Index>(j);
    out.distances.push_back(cost(ii, jj));
    out.c1.col(static_cast<Index>(m)) = s1.col(ii);
    out.c2.col(static_cast<Index>(m)) = flip(ii, jj) ? Vector(-s2.col(jj)) : Vector(s2.col(jj));
  }
  return out;
}

}  // namespace usca
