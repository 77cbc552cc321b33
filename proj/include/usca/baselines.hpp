#pragma once

// Reference methods: CCA on aligned pairs, symmetric FastICA, and ICA followed
// by cross-view marginal matching.

#include <utility>
#include <vector>

#include "usca/numerics.hpp"

namespace usca {

struct CcaResult {
  Matrix q1, q2;           // dC x d1, dC x d2, applied to centered data
  RowVector mean1, mean2;  // column means removed before projecting
  Vector correlations;     // descending

  Matrix transform1(const Matrix& x1) const;
  Matrix transform2(const Matrix& x2) const;
};

/// CCA on row-aligned views. Needs N >= d1 + d2 - dC rows, which equals
/// dC + dP1 + dP2 when both mixings are square, and both covariances of rank
/// at least dC.
CcaResult cca_fit(const Matrix& x1, const Matrix& x2, std::size_t d_shared,
                  double rank_tol = 1e-10);

struct IcaResult {
  Matrix unmixing;   // k x d, applied to centered data
  RowVector mean;
  Matrix sources;    // N x k, unit empirical variance
  bool converged = false;
  std::size_t iterations = 0;
};

struct FastIcaOptions {
  std::size_t max_iter = 500;
  double tol = 1e-6;
};

/// Symmetric FastICA with the tanh contrast on PCA-whitened data.
IcaResult fastica(const Matrix& x, std::size_t k, Rng& rng, const FastIcaOptions& opts = {});

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(const Vector& a, const Vector& b);

/// Exact minimum-cost assignment on a rectangular cost matrix that selects
/// `count` pairs (row, col) with no repeated row or column. count defaults to
/// min(rows, cols). Pairs are returned sorted by row.
std::vector<std::pair<std::size_t, std::size_t>> min_cost_assignment(const Matrix& cost,
                                                                     std::size_t count);
std::vector<std::pair<std::size_t, std::size_t>> min_cost_assignment(const Matrix& cost);

struct IcaMatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (component of view 1, of view 2)
  std::vector<double> distances;                            // KS statistic per pair
  Matrix c1, c2;   // N1 x dC, N2 x dC matched sources; c2 sign-aligned to c1
  IcaResult ica1, ica2;
};

/// FastICA on each view, KS distances between every pair of recovered
/// marginals (minimised over a sign flip), and a minimum-cost choice of dC
/// non-repeating pairs.
IcaMatchResult ica_match(const Matrix& x1, const Matrix& x2, std::size_t d_shared, Rng& rng);

}  // namespace usca
