#pragma once

// Dense linear algebra, statistics, seeded randomness and the Adam optimizer
// shared by every other part of the library.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <string_view>
#include <vector>

namespace usca {

/// Row-major dense matrix. Samples are stored one per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

/// Throws ValidationError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);

/// Throws DimensionError unless `m` is rows x cols.
void require_shape(const Matrix& m, Index rows, Index cols, std::string_view what);

/// (1/N) X'X, with X column-centered first when `center` is set.
Matrix empirical_covariance(const Matrix& x, bool center);

/// Column means of a sample matrix.
RowVector column_means(const Matrix& x);

/// Subtracts the column means in place and returns them.
RowVector center_columns(Matrix& x);

struct SymEig {
  Vector values;   // descending
  Matrix vectors;  // orthonormal eigenvectors, one per column
};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// descending. Each eigenvector is signed so that its largest-magnitude entry
/// is positive, which makes the result reproducible.
SymEig sym_eig(const Matrix& s);

/// W = Lambda_r^{-1/2} V_r' over the eigenvalues above rel_tol * lambda_max.
/// Rows follow descending eigenvalue order, except for an exactly diagonal S
/// where V is fixed to the identity and rows keep the original axis order.
Matrix whitening_matrix(const Matrix& s, double rel_tol = 1e-10);

/// Same transform with rows always in descending eigenvalue order.
Matrix spectral_whitening(const Matrix& s, double rel_tol = 1e-10);

/// Frobenius norm of W S W' - I.
double whitening_residual(const Matrix& w, const Matrix& s);

/// Squared Euclidean distances between the rows of a and b.
Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b);

/// Median of the pairwise Euclidean distances among the rows of x
/// (off-diagonal pairs only).
double median_pairwise_distance(const Matrix& x);

/// Deterministic random source. The engine is std::mt19937_64 seeded through
/// splitmix64; substreams derive a new seed from (seed, purpose) so that
/// independent consumers never share a sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent stream keyed by `purpose`. Same (seed, purpose) gives the
  /// same stream every time.
  Rng substream(std::string_view purpose) const;

  double uniform();                   // [0, 1)
  double uniform(double a, double b); // [a, b)
  double normal();
  double normal(double mean, double stddev);
  double gamma(double shape, double scale);
  std::uint64_t next_u64();
  std::size_t index(std::size_t n);   // uniform on [0, n)

  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0);
  std::vector<std::size_t> permutation(std::size_t n);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for one parameter tensor.
class AdamState {
 public:
  AdamState() = default;
  AdamState(Index rows, Index cols, AdamConfig config = {});

  /// One bias-corrected Adam update of `param` in place.
  void step(Matrix& param, const Matrix& grad);

  long steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  void set_lr(double lr) noexcept { config_.lr = lr; }
  const Matrix& first_moment() const noexcept { return m_; }
  const Matrix& second_moment() const noexcept { return v_; }

 private:
  AdamConfig config_;
  Matrix m_;
  Matrix v_;
  long t_ = 0;
};

struct ValueAndGrad {
  double value = 0.0;
  Matrix grad;
};

using ScalarFunction = std::function<ValueAndGrad(const Matrix&)>;

/// Max over entries of |g_analytic - g_fd| / max(1, |g_fd|) using central
/// differences with step h.
double grad_check(const ScalarFunction& f, const Matrix& x0, double h = 1e-5);

}  // namespace usca
