#include "doctest.h"

#include <cmath>

#include "usca/distmatch.hpp"
#include "usca/error.hpp"
#include "usca/eval.hpp"

using namespace usca;

TEST_CASE("leakage examples") {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(4, 4) + Matrix::Identity(4, 4) * 3.0;
  const Matrix ainv = a.inverse();
  // QA = [Theta, 0]
  Matrix h = Matrix::Zero(2, 4);
  h.leftCols(2) = rng.normal_matrix(2, 2);
  CHECK(leakage(h * ainv, a, 2) < 1e-12);
  // QA = [0, Xi]
  h.setZero();
  h.rightCols(2) = rng.normal_matrix(2, 2);
  CHECK(leakage(h * ainv, a, 2) == doctest::Approx(1.0));
  // QA = [I, I]
  h << 1, 0, 1, 0, 0, 1, 0, 1;
  CHECK(leakage(h * ainv, a, 2) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK_THROWS_AS(leakage(Matrix::Zero(2, 3), a, 2), DimensionError);
}

TEST_CASE("theta consistency examples") {
  Rng rng(2);
  const Matrix a1 = rng.normal_matrix(3, 3) + Matrix::Identity(3, 3) * 3.0;
  const Matrix a2 = rng.normal_matrix(3, 3) + Matrix::Identity(3, 3) * 3.0;
  const Matrix q1 = rng.normal_matrix(2, 3);
  // Q2 chosen so that Q2 A2 = Q1 A1
  const Matrix q2 = q1 * a1 * a2.inverse();
  CHECK(theta_consistency(q1, a1, q2, a2, 2) < 1e-12);
  CHECK(theta_consistency(q1, a1, -q2, a2, 2) == doctest::Approx(2.0));
  CHECK_THROWS_AS(theta_consistency(q1, a1, Matrix::Zero(3, 3), a2, 2), DimensionError);
}

TEST_CASE("leakage lies in [0, 1] and ignores the scale of Q") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = rng.normal_matrix(3, 3);
    const Matrix q = rng.normal_matrix(2, 3);
    const double l = leakage(q, a, 2);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
    CHECK(leakage(-4.0 * q, a, 2) == doctest::Approx(l));
  }
}

TEST_CASE("pair match error examples") {
  Rng rng(4);
  const Matrix x = rng.normal_matrix(50, 3);
  const Matrix q = rng.normal_matrix(2, 3);
  CHECK(pair_match_error(q, x, q, x) == 0.0);
  CHECK(pair_match_error(q, x, -q, x) == doctest::Approx(2.0));
  CHECK_THROWS_AS(pair_match_error(q, x, q, x.topRows(10)), DimensionError);
}

TEST_CASE("pair match error is invariant to a common orthogonal transform") {
  Rng rng(5);
  const Matrix x1 = rng.normal_matrix(40, 3), x2 = rng.normal_matrix(40, 3);
  const Matrix q1 = rng.normal_matrix(2, 3), q2 = rng.normal_matrix(2, 3);
  const double t = 0.7;
  Matrix r(2, 2);
  r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
  CHECK(pair_match_error(r * q1, x1, r * q2, x2) == doctest::Approx(pair_match_error(q1, x1, q2, x2)));
}

TEST_CASE("rotated Gaussian codes: distributions match, pairs do not") {
  Rng rng(6);
  const Matrix c = rng.normal_matrix(2000, 2);
  Matrix r(2, 2);
  r << 0, -1, 1, 0;  // 90 degrees
  const Matrix id = Matrix::Identity(2, 2);
  const double pme = pair_match_error(id, c, r, c);
  CHECK(pme == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  const Matrix u = c.topRows(1000), v = (c.bottomRows(1000) * r.transpose()).eval();
  CHECK(std::abs(mmd2_unbiased(u, v, 1.0).value) < 5e-3);
}

TEST_CASE("knn accuracy") {
  Rng rng(7);
  const Matrix e = rng.normal_matrix(200, 4);
  std::vector<std::size_t> id(200);
  for (std::size_t i = 0; i < id.size(); ++i) id[i] = i;
  CHECK(knn_accuracy(e, e, id, 1) == 1.0);
  CHECK(knn_accuracy(e, e, id, 200) == 1.0);
  CHECK_THROWS_AS(knn_accuracy(e, e, id, 201), ValidationError);
  CHECK_THROWS_AS(knn_accuracy(e, e, id, 0), ValidationError);

  const Matrix q = rng.normal_matrix(200, 4);
  double prev = 0.0;
  for (std::size_t k : {1, 2, 5, 10, 50, 200}) {
    const double acc = knn_accuracy(q, e, id, k);
    CHECK(acc >= prev);
    prev = acc;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("knn accuracy at chance level") {
  Rng rng(8);
  const std::size_t n = 1000;
  double hits = 0.0;
  const int trials = 20;
  std::vector<std::size_t> truth(n);
  for (std::size_t i = 0; i < n; ++i) truth[i] = i;
  for (int t = 0; t < trials; ++t) {
    const Matrix a = rng.normal_matrix(n, 3), b = rng.normal_matrix(n, 3);
    hits += knn_accuracy(a, b, truth, 1) * n;
  }
  // expected 1 hit per trial; Poisson with mean 20 over all trials
  CHECK(hits <= 20 + 4 * std::sqrt(20.0));
}

namespace {

Matrix unit_rows(std::initializer_list<double> degrees) {
  Matrix m(static_cast<Index>(degrees.size()), 2);
  Index i = 0;
  for (double d : degrees) {
    const double t = d * M_PI / 180.0;
    m(i, 0) = std::cos(t);
    m(i, 1) = std::sin(t);
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("CSLS demotes a hub: hand-computed instance") {
  // references: hub at 0 deg, a at 50, b at -50; queries at 20, -20, 0
  const Matrix refs = unit_rows({0.0, 50.0, -50.0});
  const Matrix qs = unit_rows({20.0, -20.0, 0.0});
  const Dictionary dict{{0, 1}, {1, 2}, {2, 0}};
  CHECK(retrieval_precision(qs, refs, dict, 1, Scorer::NN) == doctest::Approx(100.0 / 3.0));
  CHECK(retrieval_precision(qs, refs, dict, 1, Scorer::CSLS, 2) == doctest::Approx(100.0));

  const double c20 = std::cos(20 * M_PI / 180), c30 = std::cos(30 * M_PI / 180),
               c50 = std::cos(50 * M_PI / 180);
  const double r_query = (c20 + c30) / 2;  // query at 20 deg: hub and a
  const double r_hub = (1.0 + c20) / 2;    // hub: queries at 0 and +-20
  const double r_a = (c30 + c50) / 2;      // a: queries at 20 and 0
  const Matrix s = csls_scores(qs, refs, 2);
  CHECK(s(0, 0) == doctest::Approx(2 * c20 - r_query - r_hub));
  CHECK(s(0, 1) == doctest::Approx(2 * c30 - r_query - r_a));
  CHECK(s(0, 1) > s(0, 0));
}

TEST_CASE("retrieval precision properties") {
  Rng rng(9);
  const Matrix e = rng.normal_matrix(100, 5);
  Dictionary id;
  for (std::size_t i = 0; i < 100; ++i) id.push_back({i, i});
  CHECK(retrieval_precision(e, e, id, 1, Scorer::NN) == 100.0);
  CHECK(retrieval_precision(e, e, id, 1, Scorer::CSLS) == 100.0);

  const Matrix noisy = e + rng.normal_matrix(100, 5) * 0.8;
  double prev = 0.0;
  for (std::size_t k : {1, 5, 10, 50}) {
    const double p = retrieval_precision(noisy, e, id, k, Scorer::CSLS);
    CHECK(p >= prev);
    prev = p;
  }

  Matrix scaled = noisy;
  for (Index i = 0; i < scaled.rows(); ++i) scaled.row(i) *= 0.1 + static_cast<double>(i);
  CHECK(retrieval_precision(scaled, e, id, 1, Scorer::NN) ==
        retrieval_precision(noisy, e, id, 1, Scorer::NN));

  // one query with two acceptable translations
  const Dictionary multi{{0, 3}, {0, 0}};
  CHECK(retrieval_precision(e, e, multi, 1, Scorer::NN) == 100.0);

  Matrix zero = e;
  zero.row(4).setZero();
  CHECK_THROWS_AS(retrieval_precision(zero, e, id, 1, Scorer::NN), ValidationError);
}

TEST_CASE("abs pearson") {
  Rng rng(10);
  const Vector u = rng.normal_matrix(500, 1).col(0);
  CHECK(abs_pearson(u, 3.0 * u) == doctest::Approx(1.0));
  CHECK(abs_pearson(u, -u) == doctest::Approx(1.0));
  const Vector a = rng.normal_matrix(100000, 1).col(0), b = rng.normal_matrix(100000, 1).col(0);
  CHECK(abs_pearson(a, b) <= 0.02);
  CHECK_THROWS_AS(abs_pearson(u, Vector::Constant(500, 2.0)), ValidationError);
  CHECK_THROWS_AS(abs_pearson(u, u.head(10)), DimensionError);
}

TEST_CASE("ident report json and validation") {
  IdentReport r;
  r.leakage1 = 0.1;
  r.leakage2 = 0.2;
  r.theta_rel_diff = 0.05;
  r.pair_match_error = 0.12;
  r.whitening_residual1 = 0.01;
  r.whitening_residual2 = 0.02;
  r.private_corr1 = 0.95;
  r.ica_corr = {0.97, 0.99};
  r.validate();
  const IdentReport back = IdentReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK(!IdentReport{}.private_corr1.has_value());
  r.leakage1 = 1.5;
  CHECK_THROWS_AS(r.validate(), ValidationError);
  r.leakage1 = std::nan("");
  CHECK_THROWS_AS(r.validate(), ValidationError);
}
