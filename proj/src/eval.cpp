#include "usca/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "usca/error.hpp"

namespace usca {

namespace {

void check_qa(const Matrix& q, const Matrix& a, std::size_t d_shared, const char* what) {
  if (q.cols() != a.rows()) throw DimensionError(std::string(what) + ": Q and A do not conform");
  if (d_shared == 0 || d_shared > static_cast<std::size_t>(a.cols()))
    throw DimensionError(std::string(what) + ": d_shared out of range");
}

}  // namespace

double leakage(const Matrix& q, const Matrix& a, std::size_t d_shared) {
  check_qa(q, a, d_shared, "leakage");
  const Matrix h = q * a;
  const double total = h.norm();
  if (total == 0.0) throw ValidationError("leakage: Q A is zero");
  const auto dc = static_cast<Index>(d_shared);
  return h.rightCols(h.cols() - dc).norm() / total;
}

double theta_consistency(const Matrix& q1, const Matrix& a1, const Matrix& q2, const Matrix& a2,
                         std::size_t d_shared) {
  check_qa(q1, a1, d_shared, "theta_consistency");
  check_qa(q2, a2, d_shared, "theta_consistency");
  if (q1.rows() != q2.rows()) throw DimensionError("theta_consistency: Q row mismatch");
  const auto dc = static_cast<Index>(d_shared);
  const Matrix t1 = (q1 * a1).leftCols(dc);
  const Matrix t2 = (q2 * a2).leftCols(dc);
  const double scale = std::max(t1.norm(), t2.norm());
  if (scale == 0.0) throw ValidationError("theta_consistency: both thetas are zero");
  return (t1 - t2).norm() / scale;
}

double pair_match_error(const Matrix& q1, const Matrix& x1, const Matrix& q2, const Matrix& x2) {
  if (x1.rows() != x2.rows()) throw DimensionError("pair_match_error: row mismatch");
  if (x1.rows() == 0) throw DimensionError("pair_match_error: no rows");
  if (q1.cols() != x1.cols() || q2.cols() != x2.cols() || q1.rows() != q2.rows())
    throw DimensionError("pair_match_error: shape mismatch");
  const Matrix u = x1 * q1.transpose();
  const Matrix v = x2 * q2.transpose();
  const double num = (u - v).rowwise().norm().mean();
  const double den = u.rowwise().norm().mean();
  if (den == 0.0) throw ValidationError("pair_match_error: view 1 projections are zero");
  return num / den;
}

double knn_accuracy(const Matrix& queries, const Matrix& references,
                    const std::vector<std::size_t>& truth, std::size_t k) {
  if (queries.cols() != references.cols()) throw DimensionError("knn_accuracy: column mismatch");
  if (truth.size() != static_cast<std::size_t>(queries.rows()))
    throw DimensionError("knn_accuracy: truth length mismatch");
  if (k == 0) throw ValidationError("knn_accuracy: k must be >= 1");
  if (k > static_cast<std::size_t>(references.rows()))
    throw ValidationError("knn_accuracy: k exceeds reference count");
  std::size_t hits = 0;
  const Vector rn = references.rowwise().squaredNorm();
  for (Index i = 0; i < queries.rows(); ++i) {
    const auto t = truth[static_cast<std::size_t>(i)];
    if (t >= static_cast<std::size_t>(references.rows()))
      throw ValidationError("knn_accuracy: truth index out of range");
    // rank of the true reference = number of strictly closer references
    const Vector d = rn - 2.0 * references * queries.row(i).transpose();
    const double dt = d(static_cast<Index>(t));
    std::size_t closer = 0;
    for (Index j = 0; j < d.size(); ++j)
      if (d(j) < dt) ++closer;
    if (closer < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.rows());
}

Matrix normalize_rows(const Matrix& x) {
  const Vector n = x.rowwise().norm();
  if ((n.array() == 0.0).any()) throw ValidationError("retrieval: zero-norm embedding row");
  return n.cwiseInverse().asDiagonal() * x;
}

namespace {

// Mean of the k largest entries of each row.
Vector mean_top_k(const Matrix& s, std::size_t k) {
  k = std::min<std::size_t>(k, static_cast<std::size_t>(s.cols()));
  Vector out(s.rows());
  std::vector<double> row(static_cast<std::size_t>(s.cols()));
  for (Index i = 0; i < s.rows(); ++i) {
    for (Index j = 0; j < s.cols(); ++j) row[static_cast<std::size_t>(j)] = s(i, j);
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k - 1), row.end(),
                     std::greater<>());
    out(i) = std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
             static_cast<double>(k);
  }
  return out;
}

}  // namespace

Matrix csls_scores(const Matrix& queries, const Matrix& references, std::size_t csls_k) {
  if (queries.cols() != references.cols()) throw DimensionError("csls: column mismatch");
  if (csls_k == 0) throw ValidationError("csls: neighborhood size must be >= 1");
  const Matrix cos = normalize_rows(queries) * normalize_rows(references).transpose();
  const Vector r_query = mean_top_k(cos, csls_k);                   // per query, over references
  const Vector r_ref = mean_top_k(cos.transpose(), csls_k);         // per reference, over queries
  Matrix s = 2.0 * cos;
  s.colwise() -= r_query;
  s.rowwise() -= r_ref.transpose();
  return s;
}

double retrieval_precision(const Matrix& queries, const Matrix& references, const Dictionary& dict,
                           std::size_t k, Scorer scorer, std::size_t csls_k) {
  if (queries.cols() != references.cols()) throw DimensionError("retrieval: column mismatch");
  if (k == 0) throw ValidationError("retrieval: k must be >= 1");
  if (dict.empty()) throw ValidationError("retrieval: empty dictionary");
  std::map<std::size_t, std::vector<std::size_t>> gold;
  for (const auto& [s, t] : dict) {
    if (s >= static_cast<std::size_t>(queries.rows()) ||
        t >= static_cast<std::size_t>(references.rows()))
      throw ValidationError("retrieval: dictionary index out of range");
    gold[s].push_back(t);
  }
  std::vector<Index> rows;
  for (const auto& [s, _] : gold) rows.push_back(static_cast<Index>(s));
  Matrix q(static_cast<Index>(rows.size()), queries.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) q.row(static_cast<Index>(i)) = queries.row(rows[i]);

  Matrix scores;
  if (scorer == Scorer::NN) {
    scores = normalize_rows(q) * normalize_rows(references).transpose();
  } else {
    // the reference-side neighborhood uses every query, not just dictionary rows
    const Matrix full = csls_scores(queries, references, csls_k);
    scores.resize(q.rows(), references.rows());
    for (std::size_t i = 0; i < rows.size(); ++i) scores.row(static_cast<Index>(i)) = full.row(rows[i]);
  }
  std::size_t hits = 0;
  std::size_t i = 0;
  for (const auto& [s, targets] : gold) {
    const auto row = scores.row(static_cast<Index>(i++));
    double best = -std::numeric_limits<double>::infinity();
    for (auto t : targets) best = std::max(best, row(static_cast<Index>(t)));
    std::size_t better = 0;
    for (Index j = 0; j < row.size(); ++j)
      if (row(j) > best) ++better;
    if (better < k) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gold.size());
}

double abs_pearson(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionError("abs_pearson: length mismatch");
  if (u.size() < 2) throw DimensionError("abs_pearson: need at least 2 samples");
  const Vector a = u.array() - u.mean();
  const Vector b = v.array() - v.mean();
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValidationError("abs_pearson: zero variance");
  return std::min(1.0, std::abs(a.dot(b)) / (na * nb));
}

void IdentReport::validate() const {
  for (double v : {leakage1, leakage2, theta_rel_diff, pair_match_error, whitening_residual1,
                   whitening_residual2})
    if (!std::isfinite(v)) throw ValidationError("report: non-finite field");
  for (double l : {leakage1, leakage2})
    if (l < 0.0 || l > 1.0) throw ValidationError("report: leakage outside [0, 1]");
  if (theta_rel_diff < 0 || pair_match_error < 0) throw ValidationError("report: negative metric");
}

nlohmann::json IdentReport::to_json() const {
  nlohmann::json j{{"leakage1", leakage1},
                   {"leakage2", leakage2},
                   {"theta_rel_diff", theta_rel_diff},
                   {"pair_match_error", pair_match_error},
                   {"whitening_residual1", whitening_residual1},
                   {"whitening_residual2", whitening_residual2}};
  if (private_corr1) j["private_corr1"] = *private_corr1;
  if (private_corr2) j["private_corr2"] = *private_corr2;
  if (!ica_corr.empty()) j["ica_corr"] = ica_corr;
  return j;
}

IdentReport IdentReport::from_json(const nlohmann::json& j) {
  IdentReport r;
  r.leakage1 = j.at("leakage1");
  r.leakage2 = j.at("leakage2");
  r.theta_rel_diff = j.at("theta_rel_diff");
  r.pair_match_error = j.at("pair_match_error");
  r.whitening_residual1 = j.at("whitening_residual1");
  r.whitening_residual2 = j.at("whitening_residual2");
  if (j.contains("private_corr1")) r.private_corr1 = j["private_corr1"].get<double>();
  if (j.contains("private_corr2")) r.private_corr2 = j["private_corr2"].get<double>();
  if (j.contains("ica_corr")) r.ica_corr = j["ica_corr"].get<std::vector<double>>();
  r.validate();
  return r;
}

}  // namespace usca
