#include "usca/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "usca/error.hpp"

namespace usca {

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw ValidationError(std::string(what) + ": non-finite entry");
  }
}

void require_shape(const Matrix& m, Index rows, Index cols, std::string_view what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << what << ": expected " << rows << "x" << cols << ", got " << m.rows() << "x"
       << m.cols();
    throw DimensionError(os.str());
  }
}

RowVector column_means(const Matrix& x) {
  if (x.rows() == 0) throw DimensionError("column_means: empty matrix");
  return x.colwise().mean();
}

RowVector center_columns(Matrix& x) {
  RowVector mu = column_means(x);
  x.rowwise() -= mu;
  return mu;
}

Matrix empirical_covariance(const Matrix& x, bool center) {
  if (x.rows() < 2) throw DimensionError("empirical_covariance: need at least 2 rows");
  require_finite(x, "empirical_covariance");
  const double n = static_cast<double>(x.rows());
  Matrix s;
  if (center) {
    Matrix xc = x.rowwise() - x.colwise().mean();
    s = xc.transpose() * xc / n;
  } else {
    s = x.transpose() * x / n;
  }
  // exact symmetry so downstream eigensolvers never see round-off asymmetry
  return (s + s.transpose()) * 0.5;
}

SymEig sym_eig(const Matrix& s) {
  if (s.rows() != s.cols()) throw DimensionError("sym_eig: matrix is not square");
  require_finite(s, "sym_eig");
  const double norm = s.norm();
  if ((s - s.transpose()).norm() > 1e-8 * std::max(norm, 1e-300)) {
    throw ValidationError("sym_eig: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(s), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw ValidationError("sym_eig: solver failed");
  const Index n = s.rows();
  SymEig out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Index k = 0; k < n; ++k) {
    const Index src = n - 1 - k;
    out.values(k) = solver.eigenvalues()(src);
    Vector v = solver.eigenvectors().col(src);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.vectors.col(k) = v;
  }
  return out;
}

namespace {

bool is_diagonal(const Matrix& s) {
  for (Index i = 0; i < s.rows(); ++i)
    for (Index j = 0; j < s.cols(); ++j)
      if (i != j && s(i, j) != 0.0) return false;
  return true;
}

}  // namespace

Matrix whitening_matrix(const Matrix& s, double rel_tol) {
  if (s.rows() != s.cols()) throw DimensionError("whitening_matrix: matrix is not square");
  require_finite(s, "whitening_matrix");
  if (is_diagonal(s)) {
    const double lmax = s.diagonal().maxCoeff();
    const double tau = rel_tol * lmax;
    std::vector<Index> keep;
    for (Index i = 0; i < s.rows(); ++i)
      if (lmax > 0 && s(i, i) > tau) keep.push_back(i);
    if (keep.empty()) throw DegenerateCovarianceError("whitening_matrix: covariance is degenerate");
    Matrix w = Matrix::Zero(static_cast<Index>(keep.size()), s.cols());
    for (std::size_t r = 0; r < keep.size(); ++r)
      w(static_cast<Index>(r), keep[r]) = 1.0 / std::sqrt(s(keep[r], keep[r]));
    return w;
  }
  return spectral_whitening(s, rel_tol);
}

Matrix spectral_whitening(const Matrix& s, double rel_tol) {
  const SymEig eig = sym_eig(s);
  const double lmax = eig.values(0);
  const double tau = rel_tol * lmax;
  Index rank = 0;
  while (rank < eig.values.size() && lmax > 0 && eig.values(rank) > tau) ++rank;
  if (rank == 0) throw DegenerateCovarianceError("whitening_matrix: covariance is degenerate");
  Matrix w(rank, s.cols());
  for (Index k = 0; k < rank; ++k)
    w.row(k) = eig.vectors.col(k).transpose() / std::sqrt(eig.values(k));
  return w;
}

double whitening_residual(const Matrix& w, const Matrix& s) {
  const Matrix r = w * s * w.transpose() - Matrix::Identity(w.rows(), w.rows());
  return r.norm();
}

Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("pairwise_sq_dists: column mismatch");
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix d = -2.0 * a * b.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

double median_pairwise_distance(const Matrix& x) {
  if (x.rows() < 2) throw DimensionError("median_pairwise_distance: need at least 2 rows");
  const Matrix d2 = pairwise_sq_dists(x, x);
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.rows(); ++j) vals.push_back(d2(i, j));
  auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
  std::nth_element(vals.begin(), mid, vals.end());
  return std::sqrt(*mid);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::substream(std::string_view purpose) const {
  // FNV-1a over the purpose tag
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng(splitmix64(seed_ ^ splitmix64(h)));
}

double Rng::uniform() {
  // 53 random mantissa bits
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double Rng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

double Rng::gamma(double shape, double scale) {
  return std::gamma_distribution<double>(shape, scale)(engine_);
}

std::uint64_t Rng::next_u64() { return engine_(); }

std::size_t Rng::index(std::size_t n) {
  return static_cast<std::size_t>(
      std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_));
}

Matrix Rng::normal_matrix(Index rows, Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = stddev * normal();
  return m;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  // Fisher-Yates with our own index draw (std::shuffle is implementation-defined)
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
  return p;
}

AdamState::AdamState(Index rows, Index cols, AdamConfig config)
    : config_(config), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

void AdamState::step(Matrix& param, const Matrix& grad) {
  if (param.rows() != m_.rows() || param.cols() != m_.cols() || grad.rows() != m_.rows() ||
      grad.cols() != m_.cols()) {
    throw DimensionError("adam_step: shape mismatch");
  }
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  param.array() -= config_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);
}

double grad_check(const ScalarFunction& f, const Matrix& x0, double h) {
  const ValueAndGrad base = f(x0);
  require_shape(base.grad, x0.rows(), x0.cols(), "grad_check: analytic gradient");
  if (!std::isfinite(base.value)) throw ValidationError("grad_check: non-finite value at x0");
  double worst = 0.0;
  Matrix x = x0;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      const double orig = x(i, j);
      x(i, j) = orig + h;
      const double fp = f(x).value;
      x(i, j) = orig - h;
      const double fm = f(x).value;
      x(i, j) = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw ValidationError("grad_check: non-finite value at probe point");
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::abs(base.grad(i, j) - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace usca
