#include "doctest.h"

#include <cmath>
#include <numeric>

#include "usca/distmatch.hpp"
#include "usca/error.hpp"

using namespace usca;

namespace {

Matrix shuffle_rows(const Matrix& x, Rng& rng) {
  const auto p = rng.permutation(static_cast<std::size_t>(x.rows()));
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < p.size(); ++i) out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(p[i]));
  return out;
}

// Independent reference implementation by explicit double loops.
double mmd_reference(const Matrix& x, const Matrix& y, double s) {
  auto k = [s](const auto& a, const auto& b) { return std::exp(-(a - b).squaredNorm() / (2 * s * s)); };
  const double m = static_cast<double>(x.rows()), n = static_cast<double>(y.rows());
  double sxx = 0, syy = 0, sxy = 0;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.rows(); ++j)
      if (i != j) sxx += k(x.row(i), x.row(j));
  for (Index i = 0; i < y.rows(); ++i)
    for (Index j = 0; j < y.rows(); ++j)
      if (i != j) syy += k(y.row(i), y.row(j));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < y.rows(); ++j) sxy += k(x.row(i), y.row(j));
  return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2 * sxy / (m * n);
}

}  // namespace

TEST_CASE("mmd2_unbiased hand example") {
  Matrix x(2, 1), y(2, 1);
  x << 0, 1;
  y << 0, 1;
  const MmdResult r = mmd2_unbiased(x, y, 1.0);
  CHECK(r.value == doctest::Approx(std::exp(-0.5) - 1.0).epsilon(1e-14));
  CHECK(r.value == doctest::Approx(-0.3935).epsilon(1e-4));
}

TEST_CASE("mmd2_unbiased matches the loop reference, multiple bandwidths add") {
  Rng rng(4);
  const Matrix x = rng.normal_matrix(7, 3);
  const Matrix y = rng.normal_matrix(5, 3) * 1.3;
  CHECK(mmd2_unbiased(x, y, 0.8).value == doctest::Approx(mmd_reference(x, y, 0.8)).epsilon(1e-12));
  const double both = mmd2_unbiased(x, y, std::vector<double>{0.8, 2.0}).value;
  CHECK(both == doctest::Approx(mmd_reference(x, y, 0.8) + mmd_reference(x, y, 2.0)).epsilon(1e-12));
}

TEST_CASE("mmd2_unbiased errors") {
  CHECK_THROWS_AS(mmd2_unbiased(Matrix::Zero(1, 2), Matrix::Zero(3, 2), 1.0), DimensionError);
  CHECK_THROWS_AS(mmd2_unbiased(Matrix::Zero(3, 2), Matrix::Zero(3, 3), 1.0), DimensionError);
  CHECK_THROWS_AS(mmd2_unbiased(Matrix::Zero(3, 2), Matrix::Zero(3, 2), 0.0), ValidationError);
}

TEST_CASE("mmd2_unbiased is unbiased under P = Q") {
  Rng rng(21);
  std::vector<double> vals;
  for (int t = 0; t < 100; ++t)
    vals.push_back(mmd2_unbiased(rng.normal_matrix(50, 2), rng.normal_matrix(50, 2), 1.0).value);
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / 100.0;
  double var = 0;
  for (double v : vals) var += (v - mean) * (v - mean);
  const double se = std::sqrt(var / 99.0 / 100.0);
  CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("mmd2_unbiased gradients match finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x0 = rng.normal_matrix(6, 2);
    const Matrix y0 = rng.normal_matrix(5, 2) + Matrix::Constant(5, 2, 0.5);
    const std::vector<double> sig{0.7, 1.5};
    CHECK(grad_check([&](const Matrix& x) {
            const auto r = mmd2_unbiased(x, y0, sig);
            return ValueAndGrad{r.value, r.grad_x};
          }, x0) <= 1e-4);
    CHECK(grad_check([&](const Matrix& y) {
            const auto r = mmd2_unbiased(x0, y, sig);
            return ValueAndGrad{r.value, r.grad_y};
          }, y0) <= 1e-4);
  }
}

TEST_CASE("estimators are permutation invariant over rows") {
  Rng rng(9);
  const Matrix x = rng.normal_matrix(20, 2), y = rng.normal_matrix(15, 2);
  const double a = mmd2_unbiased(x, y, 1.0).value;
  CHECK(std::abs(a - mmd2_unbiased(shuffle_rows(x, rng), shuffle_rows(y, rng), 1.0).value) < 1e-12);

  const Matrix u = rng.normal_matrix(20, 2), v = rng.normal_matrix(20, 1);
  const auto p = rng.permutation(20);
  Matrix up(20, 2), vp(20, 1);
  for (std::size_t i = 0; i < 20; ++i) {
    up.row(static_cast<Index>(i)) = u.row(static_cast<Index>(p[i]));
    vp.row(static_cast<Index>(i)) = v.row(static_cast<Index>(p[i]));
  }
  CHECK(std::abs(hsic_biased(u, v, 1, 1).value - hsic_biased(up, vp, 1, 1).value) < 1e-12);

  Rng drng(1);
  Discriminator f(2, {8, 4}, drng);
  const double g = gan_value_and_grads(f, x, y).value;
  CHECK(std::abs(g - gan_value_and_grads(f, shuffle_rows(x, rng), shuffle_rows(y, rng)).value) < 1e-12);
}

TEST_CASE("KernelSpec resolution") {
  CHECK(KernelSpec::fixed(2.5).resolve(Matrix::Zero(3, 1)) == std::vector<double>{2.5});
  Matrix pooled(3, 1);
  pooled << 0, 1, 3;
  const auto s = KernelSpec::median({0.5, 1.0}).resolve(pooled);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(2.0));
  CHECK_THROWS_AS(KernelSpec::fixed(0.0), ValidationError);
  CHECK_THROWS_AS(KernelSpec::median().resolve(Matrix::Zero(4, 2)), ValidationError);
  const KernelSpec k = KernelSpec::from_json(KernelSpec::median({0.25, 2.0}).to_json());
  CHECK(k.scales == std::vector<double>{0.25, 2.0});
}

TEST_CASE("hsic_biased: constant input gives zero, values nonnegative") {
  Rng rng(12);
  const Matrix u = rng.normal_matrix(30, 2);
  CHECK(std::abs(hsic_biased(u, Matrix::Constant(30, 1, 3.0), 1.0, 1.0).value) < 1e-14);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = rng.normal_matrix(10, 2), b = rng.normal_matrix(10, 3);
    CHECK(hsic_biased(a, b, 0.5 + rng.uniform(), 0.5 + rng.uniform()).value >= -1e-12);
  }
}

TEST_CASE("hsic_biased: dependent pairs score above independent shuffles") {
  Rng rng(13);
  int wins = 0;
  for (int t = 0; t < 100; ++t) {
    const Matrix u = rng.normal_matrix(40, 1);
    const double dep = hsic_biased(u, u, 1.0, 1.0).value;
    const double ind = hsic_biased(u, shuffle_rows(u, rng), 1.0, 1.0).value;
    wins += dep > ind;
  }
  CHECK(wins == 100);
}

TEST_CASE("hsic_biased gradients match finite differences") {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix u0 = rng.normal_matrix(8, 2);
    const Matrix v0 = u0.col(0) * 0.5 + rng.normal_matrix(8, 1);
    CHECK(grad_check([&](const Matrix& u) {
            const auto r = hsic_biased(u, v0, 0.9, 1.1);
            return ValueAndGrad{r.value, r.grad_u};
          }, u0) <= 1e-4);
    CHECK(grad_check([&](const Matrix& v) {
            const auto r = hsic_biased(u0, v, 0.9, 1.1);
            return ValueAndGrad{r.value, r.grad_v};
          }, v0) <= 1e-4);
  }
  CHECK_THROWS_AS(hsic_biased(Matrix::Zero(5, 1), Matrix::Zero(4, 1), 1, 1), DimensionError);
}

TEST_CASE("Discriminator architecture and output range") {
  Rng rng(15);
  Discriminator f(2, Discriminator::default_widths(), rng);
  std::size_t expect = 0, fan_in = 2;
  for (std::size_t w : {1024, 521, 512, 256, 128, 64, 1}) {
    expect += w * fan_in + w;
    fan_in = w;
  }
  CHECK(f.parameter_count() == expect);
  const Vector p = f.forward(rng.normal_matrix(50, 2) * 10.0);
  CHECK(p.minCoeff() > 0.0);
  CHECK(p.maxCoeff() < 1.0);
  const auto& w0 = f.parameters()[0];
  CHECK(w0.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (2 + 1024)));
  const Discriminator g = Discriminator::from_json(f.to_json());
  CHECK(g.forward(Matrix::Ones(1, 2))(0) == f.forward(Matrix::Ones(1, 2))(0));
}

TEST_CASE("GAN loss with a constant one-half discriminator") {
  Rng rng(16);
  Discriminator f(2, {4}, rng);
  for (auto& p : f.parameters()) p.setZero();
  const Matrix u = rng.normal_matrix(10, 2), v = rng.normal_matrix(7, 2);
  const GanResult r = gan_value_and_grads(f, u, v);
  CHECK(r.value == doctest::Approx(2.0 * std::log(0.5)));
  CHECK(r.grad_u.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.grad_v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("GAN gradients match finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Discriminator f(2, {5, 3}, rng);
    const Matrix u0 = rng.normal_matrix(6, 2), v0 = rng.normal_matrix(4, 2);
    CHECK(grad_check([&](const Matrix& u) {
            const auto r = gan_value_and_grads(f, u, v0);
            return ValueAndGrad{r.value, r.grad_u};
          }, u0) <= 1e-4);
    CHECK(grad_check([&](const Matrix& v) {
            const auto r = gan_value_and_grads(f, u0, v);
            return ValueAndGrad{r.value, r.grad_v};
          }, v0) <= 1e-4);
    const GanResult base = gan_value_and_grads(f, u0, v0);
    for (std::size_t k = 0; k < f.parameters().size(); ++k) {
      const Matrix p0 = f.parameters()[k];
      const double err = grad_check(
          [&](const Matrix& p) {
            Discriminator g = f;
            g.parameters()[k] = p;
            const auto r = gan_value_and_grads(g, u0, v0);
            return ValueAndGrad{r.disc_loss, r.grad_params[k]};
          },
          p0);
      CHECK(err <= 1e-4);
    }
    CHECK(base.grad_params.size() == f.parameters().size());
  }
}

TEST_CASE("GAN input width mismatch") {
  Rng rng(18);
  Discriminator f(3, {4}, rng);
  CHECK_THROWS_AS(gan_value_and_grads(f, Matrix::Zero(2, 2), Matrix::Zero(2, 3)), DimensionError);
}

TEST_CASE("discriminator accuracy approaches one half on identical distributions") {
  Rng rng(19);
  Discriminator f(1, {16, 8}, rng);
  std::vector<AdamState> st;
  for (const auto& p : f.parameters()) st.emplace_back(p.rows(), p.cols(), AdamConfig{.lr = 1e-3});
  double acc = 0;
  for (int t = 0; t < 300; ++t) {
    const Matrix u = rng.normal_matrix(128, 1), v = rng.normal_matrix(128, 1);
    const GanResult r = gan_value_and_grads(f, u, v);
    for (std::size_t k = 0; k < st.size(); ++k) st[k].step(f.parameters()[k], r.grad_params[k]);
    if (t >= 200) acc += r.accuracy / 100.0;
  }
  CHECK(std::abs(acc - 0.5) < 0.1);
}
