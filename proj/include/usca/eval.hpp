#pragma once

// Identifiability and retrieval metrics.

#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "usca/numerics.hpp"

namespace usca {

/// ||H[:, dC:]||_F / ||H||_F with H = Q A.
double leakage(const Matrix& q, const Matrix& a, std::size_t d_shared);

/// ||T1 - T2||_F / max(||T1||_F, ||T2||_F) with Tq = (Qq Aq)[:, :dC].
double theta_consistency(const Matrix& q1, const Matrix& a1, const Matrix& q2, const Matrix& a2,
                         std::size_t d_shared);

/// Mean row distance between Q1 x1 and Q2 x2 over aligned rows, divided by the
/// mean norm of Q1 x1.
double pair_match_error(const Matrix& q1, const Matrix& x1, const Matrix& q2, const Matrix& x2);

/// Fraction of queries i whose reference truth[i] is among the k Euclidean
/// nearest references.
double knn_accuracy(const Matrix& queries, const Matrix& references,
                    const std::vector<std::size_t>& truth, std::size_t k);

enum class Scorer { NN, CSLS };

/// query row -> acceptable reference rows.
using Dictionary = std::vector<std::pair<std::size_t, std::size_t>>;

/// Precision@k in percent over the distinct queries of `dict`. A query counts
/// as correct if any of its reference translations is in the top k.
double retrieval_precision(const Matrix& queries, const Matrix& references, const Dictionary& dict,
                           std::size_t k, Scorer scorer, std::size_t csls_k = 10);

/// CSLS score matrix 2 cos(x, y) - r_ref(x) - r_query(y).
Matrix csls_scores(const Matrix& queries, const Matrix& references, std::size_t csls_k = 10);

/// |pearson(u, v)|.
double abs_pearson(const Vector& u, const Vector& v);

struct IdentReport {
  double leakage1 = 0, leakage2 = 0;
  double theta_rel_diff = 0;
  double pair_match_error = 0;
  double whitening_residual1 = 0, whitening_residual2 = 0;
  std::optional<double> private_corr1, private_corr2;  // WithPrivate fits
  std::vector<double> ica_corr;                        // optional per-component

  /// Throws ValidationError on a non-finite field or leakage outside [0, 1].
  void validate() const;
  nlohmann::json to_json() const;
  static IdentReport from_json(const nlohmann::json& j);
};

/// Row-normalized copy; throws ValidationError on a zero row.
Matrix normalize_rows(const Matrix& x);

}  // namespace usca
