#include "doctest.h"

#include <cmath>

#include "usca/datagen.hpp"
#include "usca/error.hpp"
#include "usca/solver.hpp"

using namespace usca;

namespace {

SolverConfig small_config(std::size_t dc) {
  SolverConfig c;
  c.d_shared = dc;
  c.batch = 200;
  c.epochs = 3;
  c.eval_rows = 300;
  c.seed = 5;
  return c;
}

SyntheticDataset small_dataset(const char* name, std::size_t n, std::uint64_t seed, bool homog = false) {
  Preset p = preset(name, seed);
  p.mixing.homogeneous = homog;
  return generate_from_preset(p, n, seed);
}

}  // namespace

TEST_CASE("whitening penalty examples") {
  Rng rng(1);
  const Matrix b = rng.normal_matrix(4, 4);
  const Matrix sigma = b * b.transpose() + Matrix::Identity(4, 4);
  const Matrix w = spectral_whitening(sigma);
  CHECK(whitening_penalty(w.topRows(2), sigma).value < 1e-20);
  CHECK(whitening_penalty(Matrix::Zero(3, 4), sigma).value == doctest::Approx(3.0));
  CHECK_THROWS_AS(whitening_penalty(Matrix::Zero(2, 3), sigma), DimensionError);
}

TEST_CASE("whitening penalty gradient") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Matrix b = rng.normal_matrix(4, 4);
    const Matrix sigma = b * b.transpose() / 4.0 + Matrix::Identity(4, 4) * 0.1;
    CHECK(grad_check([&](const Matrix& q) { return whitening_penalty(q, sigma); },
                     rng.normal_matrix(2, 4) * 0.5) <= 1e-4);
  }
}

TEST_CASE("anchor penalty: zero on exact alignment, gradient check") {
  Rng rng(3);
  const Matrix a1 = rng.normal_matrix(3, 4);
  const Matrix q1 = rng.normal_matrix(2, 4);
  // view 2 = view 1 under an invertible map, Q2 chosen to undo it
  const Matrix t = rng.normal_matrix(4, 4) + Matrix::Identity(4, 4) * 3.0;
  const Matrix a2 = a1 * t.transpose();
  const Matrix q2 = q1 * t.inverse();
  CHECK(anchor_penalty(q1, q2, a1, a2, 0.5).value < 1e-20);
  for (int k = 0; k < 20; ++k) {
    const Matrix q2r = rng.normal_matrix(2, 4);
    CHECK(grad_check([&](const Matrix& q) {
            const auto r = anchor_penalty(q, q2r, a1, a2, 0.7);
            return ValueAndGrad{r.value, r.grad_q1};
          }, rng.normal_matrix(2, 4)) <= 1e-4);
    CHECK(grad_check([&](const Matrix& q) {
            const auto r = anchor_penalty(q1, q, a1, a2, 0.7);
            return ValueAndGrad{r.value, r.grad_q2};
          }, q2r) <= 1e-4);
  }
}

TEST_CASE("cross-entropy gradients") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    LinearClassifier clf{rng.normal_matrix(3, 2), rng.normal_matrix(1, 3)};
    const Matrix f0 = rng.normal_matrix(6, 2);
    std::vector<int> y;
    for (int i = 0; i < 6; ++i) y.push_back(static_cast<int>(rng.index(3)));
    CHECK(grad_check([&](const Matrix& w) {
            LinearClassifier c = clf;
            c.w = w;
            const auto r = softmax_cross_entropy(c, f0, y, 0.3);
            return ValueAndGrad{r.value, r.grad_w};
          }, clf.w) <= 1e-4);
    CHECK(grad_check([&](const Matrix& b) {
            LinearClassifier c = clf;
            c.b = b;
            const auto r = softmax_cross_entropy(c, f0, y, 0.3);
            return ValueAndGrad{r.value, r.grad_b};
          }, clf.b) <= 1e-4);
    CHECK(grad_check([&](const Matrix& f) {
            const auto r = softmax_cross_entropy(clf, f, y, 0.3);
            return ValueAndGrad{r.value, r.grad_features};
          }, f0) <= 1e-4);
  }
  LinearClassifier clf{Matrix::Zero(2, 2), Matrix::Zero(1, 2)};
  CHECK_THROWS_AS(softmax_cross_entropy(clf, Matrix::Zero(1, 2), {2}, 1.0), ValidationError);
}

TEST_CASE("full objective gradient in every mode") {
  Rng rng(5);
  const Matrix x1 = rng.normal_matrix(12, 3), x2 = rng.normal_matrix(10, 3) * 1.2;
  ObjectiveContext ctx;
  ctx.sigma1 = empirical_covariance(x1, false);
  ctx.sigma2 = empirical_covariance(x2, false);
  ctx.bandwidths = {0.8, 1.6};
  ctx.lambda = 0.1;
  ctx.beta = 0.5;
  ctx.omega = 10;
  ctx.rho = 50;
  ctx.hsic_sigma_c1 = 0.9;
  ctx.hsic_sigma_c2 = 1.1;
  ctx.hsic_sigma_p1 = 0.7;
  ctx.hsic_sigma_p2 = 1.3;
  Params p0{rng.normal_matrix(2, 3) * 0.5, rng.normal_matrix(2, 3) * 0.5, rng.normal_matrix(1, 3) * 0.5,
            rng.normal_matrix(1, 3) * 0.5};

  for (Mode mode : {Mode::Unaligned, Mode::Homogeneous, Mode::WeaklySupervised, Mode::WithPrivate}) {
    ctx.mode = mode;
    if (mode == Mode::WeaklySupervised) {
      ctx.anchors1 = x1.topRows(2);
      ctx.anchors2 = x2.topRows(2);
    } else {
      ctx.anchors1.resize(0, 3);
      ctx.anchors2.resize(0, 3);
    }
    const ObjectiveValue base = mmd_objective(p0, x1, x2, ctx);
    auto check = [&](Matrix Params::*field) {
      const double err = grad_check(
          [&](const Matrix& q) {
            Params p = p0;
            p.*field = q;
            const ObjectiveValue v = mmd_objective(p, x1, x2, ctx);
            return ValueAndGrad{v.terms.total, v.grad.*field};
          },
          p0.*field);
      CHECK(err <= 1e-4);
    };
    INFO(to_string(mode));
    check(&Params::q1);
    if (mode != Mode::Homogeneous) check(&Params::q2);
    if (mode == Mode::WithPrivate) {
      check(&Params::qp1);
      check(&Params::qp2);
      CHECK(base.terms.hsic > 0);
    }
    CHECK(std::isfinite(base.terms.total));
  }
}

TEST_CASE("detached HSIC leaves the shared gradient equal to the rho = 0 gradient") {
  Rng rng(6);
  const Matrix x1 = rng.normal_matrix(12, 3), x2 = rng.normal_matrix(10, 3);
  ObjectiveContext ctx;
  ctx.mode = Mode::WithPrivate;
  ctx.sigma1 = empirical_covariance(x1, false);
  ctx.sigma2 = empirical_covariance(x2, false);
  ctx.bandwidths = {1.0};
  ctx.lambda = 0.1;
  ctx.omega = 10;
  ctx.rho = 50;
  const Params p{rng.normal_matrix(2, 3), rng.normal_matrix(2, 3), rng.normal_matrix(1, 3),
                 rng.normal_matrix(1, 3)};
  ctx.hsic_shared_grad = false;
  const ObjectiveValue detached = mmd_objective(p, x1, x2, ctx);
  ctx.hsic_shared_grad = true;
  const ObjectiveValue joint = mmd_objective(p, x1, x2, ctx);
  ctx.rho = 0;
  const ObjectiveValue no_hsic = mmd_objective(p, x1, x2, ctx);
  CHECK(detached.terms.total == joint.terms.total);
  CHECK((detached.grad.q1 - no_hsic.grad.q1).norm() <= 1e-12);
  CHECK((detached.grad.q2 - no_hsic.grad.q2).norm() <= 1e-12);
  CHECK((detached.grad.qp1 - joint.grad.qp1).norm() <= 1e-12);
  CHECK((joint.grad.q1 - no_hsic.grad.q1).norm() > 1e-6);
}

TEST_CASE("solver config: json round trip, unknown keys, validation") {
  SolverConfig c = small_config(2);
  c.mode = Mode::WithPrivate;
  c.d_private1 = 1;
  c.d_private2 = 1;
  c.kernel = KernelSpec::median({0.5, 1.0});
  const SolverConfig back = SolverConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  nlohmann::json j = c.to_json();
  j["learning_rate"] = 1;
  CHECK_THROWS_AS(SolverConfig::from_json(j), ValidationError);
  SolverConfig bad = small_config(2);
  bad.batch = 1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config(2);
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config(0);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config(2);
  bad.restarts = 2;
  bad.screen_epochs = 2;
  bad.polish_epochs = bad.epochs - 2;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config(2);
  bad.private_warmup_epochs = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config(2);
  bad.orientation_search_epoch = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = small_config(2);
  bad.orientation_search_epoch = 1;
  bad.matcher = MatcherKind::Adversarial;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(mode_from_string("semi"), ValidationError);
}

TEST_CASE("orientation search undoes a reflected second view") {
  // x2 = -x1 has the same covariance, so both views start from the same
  // whitening directions and the shared coordinates come out point-reflected
  const SyntheticDataset ds = small_dataset("thm1a", 2000, 8);
  const Matrix x2 = -ds.x1;
  SolverConfig cfg = small_config(2);
  cfg.epochs = 2;
  const FitResult plain = fit(ds.x1, x2, cfg);
  CHECK((plain.q1->q + plain.q2->q).norm() > (plain.q1->q - plain.q2->q).norm());
  cfg.orientation_search_epoch = 1;
  const FitResult searched = fit(ds.x1, x2, cfg);
  CHECK((searched.q1->q + searched.q2->q).norm() < 0.5 * (searched.q1->q - searched.q2->q).norm());
}

TEST_CASE("anchor set validation") {
  AnchorSet a{{{0, 1}, {2, 3}}};
  a.validate(3, 4);
  CHECK_THROWS_AS(a.validate(2, 4), ValidationError);
  AnchorSet dup{{{0, 1}, {0, 2}}};
  CHECK_THROWS_AS(dup.validate(5, 5), ValidationError);
  AnchorSet dup2{{{0, 1}, {1, 1}}};
  CHECK_THROWS_AS(dup2.validate(5, 5), ValidationError);
}

TEST_CASE("fit preconditions") {
  const SyntheticDataset ds = small_dataset("thm1a", 1000, 1);
  const SolverConfig cfg = small_config(2);
  Matrix shifted = ds.x1;
  shifted.col(0).array() += 1.0;
  CHECK_THROWS_AS(fit(shifted, ds.x2, cfg), ValidationError);
  SolverConfig ws = cfg;
  ws.mode = Mode::WeaklySupervised;
  CHECK_THROWS_AS(fit(ds.x1, ds.x2, ws), ValidationError);
  SolverConfig hom = cfg;
  hom.mode = Mode::Homogeneous;
  CHECK_THROWS_AS(fit(ds.x1, ds.x2.leftCols(2), hom), DimensionError);
  SolverConfig priv = cfg;
  priv.mode = Mode::WithPrivate;
  CHECK_THROWS_AS(fit_with_private(ds.x1, ds.x2, priv), ValidationError);
}

TEST_CASE("fit is deterministic; trace length equals epochs; whitening residual small") {
  const SyntheticDataset ds = small_dataset("thm1a", 2000, 2);
  const SolverConfig cfg = small_config(2);
  const FitResult a = fit(ds.x1, ds.x2, cfg);
  const FitResult b = fit(ds.x1, ds.x2, cfg);
  CHECK(a.q1->q == b.q1->q);
  CHECK(a.q2->q == b.q2->q);
  CHECK(a.trace.size() == cfg.epochs);
  CHECK(a.q1->q.rows() == 2);
  CHECK(a.q1->q.cols() == 3);
  CHECK(!a.homogeneous());
  for (std::size_t e = 0; e < a.trace.size(); ++e) {
    CHECK(a.trace[e].epoch == e + 1);
    CHECK(a.trace[e].total == b.trace[e].total);
  }
}

TEST_CASE("weakly supervised with beta = 0 reproduces the unaligned fit") {
  const SyntheticDataset ds = small_dataset("thm3-laplace", 1500, 3);
  SolverConfig cfg = small_config(3);
  const FitResult u = fit(ds.x1, ds.x2, cfg);
  cfg.mode = Mode::WeaklySupervised;
  cfg.beta = 0.0;
  AnchorSet anchors;
  for (std::size_t i = 0; i < 3; ++i) anchors.pairs.push_back({i, ds.alignment[i]});
  const FitResult w = fit(ds.x1, ds.x2, cfg, anchors);
  CHECK(u.q1->q == w.q1->q);
  CHECK(u.q2->q == w.q2->q);
  REQUIRE(u.trace.size() == w.trace.size());
  for (std::size_t e = 0; e < u.trace.size(); ++e) CHECK(u.trace[e].matcher == w.trace[e].matcher);
}

TEST_CASE("anchors outside weakly supervised mode are rejected") {
  const SyntheticDataset ds = small_dataset("thm1a", 1000, 4);
  AnchorSet anchors{{{0, ds.alignment[0]}}};
  CHECK_THROWS_AS(fit(ds.x1, ds.x2, small_config(2), anchors), ValidationError);
}

TEST_CASE("homogeneous fit shares one projection object") {
  const SyntheticDataset ds = small_dataset("thm1b", 1000, 5, true);
  SolverConfig cfg = small_config(2);
  cfg.mode = Mode::Homogeneous;
  const FitResult r = fit(ds.x1, ds.x2, cfg);
  CHECK(r.homogeneous());
  CHECK(r.q1.get() == r.q2.get());
}

TEST_CASE("restarts: trace length still equals epochs and selection is deterministic") {
  const SyntheticDataset ds = small_dataset("thm1a", 1000, 6);
  SolverConfig cfg = small_config(2);
  cfg.epochs = 4;
  cfg.restarts = 2;
  cfg.screen_epochs = 1;
  const FitResult a = fit(ds.x1, ds.x2, cfg);
  const FitResult b = fit(ds.x1, ds.x2, cfg);
  CHECK(a.trace.size() == 4);
  CHECK(a.chosen_start == b.chosen_start);
  CHECK(a.q1->q == b.q1->q);
}

TEST_CASE("restarts with a screening rate and polish epochs keep the epoch budget") {
  const SyntheticDataset ds = small_dataset("thm1a", 1000, 6);
  SolverConfig cfg = small_config(2);
  cfg.epochs = 5;
  cfg.restarts = 2;
  cfg.screen_epochs = 2;
  cfg.screen_lr_q = 0.05;
  cfg.polish_epochs = 1;
  const FitResult a = fit(ds.x1, ds.x2, cfg);
  const FitResult b = fit(ds.x1, ds.x2, cfg);
  CHECK(a.trace.size() == 5);
  CHECK(a.q1->q == b.q1->q);
}

TEST_CASE("divergence is reported with the offending term") {
  const SyntheticDataset ds = small_dataset("thm1a", 1000, 7);
  SolverConfig cfg = small_config(2);
  // Adam steps are about lr in size, so Q ends up large enough for R(Q) to overflow
  cfg.lr_q = 1e150;
  try {
    fit(ds.x1, ds.x2, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(!e.term().empty());
  }
}

TEST_CASE("divergence in every screened start is still reported") {
  const SyntheticDataset ds = small_dataset("thm1a", 1000, 7);
  SolverConfig cfg = small_config(2);
  cfg.epochs = 4;
  cfg.restarts = 2;
  cfg.screen_epochs = 1;
  cfg.lr_q = 1e150;
  CHECK_THROWS_AS(fit(ds.x1, ds.x2, cfg), DivergenceError);
}

TEST_CASE("no private components: final matcher loss at the noise floor") {
  LatentSpec spec{{DistributionSpec::gamma(1, 3), DistributionSpec::uniform(-2, 2)}, {}, {}};
  MixingModel mix{Matrix::Identity(2, 2), Matrix::Identity(2, 2), 2, false};
  Rng rng(8), split(9);
  const SyntheticDataset ds = holdout_and_shuffle(generate_dataset(spec, mix, 3000, rng), 0.0, split);
  SolverConfig cfg = small_config(2);
  cfg.epochs = 5;
  const FitResult r = fit(ds.x1, ds.x2, cfg);
  // noise floor: the same statistic between the whitened views themselves
  const Matrix w1 = whitening_matrix(empirical_covariance(ds.x1, false));
  const Matrix w2 = whitening_matrix(empirical_covariance(ds.x2, false));
  const Matrix u = ds.x1.topRows(300) * w1.transpose();
  const Matrix v = ds.x2.bottomRows(300) * w2.transpose();
  const double floor = std::abs(mmd2_unbiased(u, v, r.bandwidths).value);
  CHECK(r.checkpoints.back().matcher <= std::max(5.0 * floor, 5e-3));
}

TEST_CASE("private fit returns four projections with the requested shapes") {
  const SyntheticDataset ds = small_dataset("private-appxG", 1000, 10);
  SolverConfig cfg = small_config(2);
  cfg.mode = Mode::WithPrivate;
  cfg.d_private1 = 1;
  cfg.d_private2 = 1;
  cfg.epochs = 2;
  const FitResult r = fit_with_private(ds.x1, ds.x2, cfg);
  REQUIRE(r.qp1);
  REQUIRE(r.qp2);
  CHECK(r.qp1->q.rows() == 1);
  CHECK(r.qp2->q.cols() == 3);
  CHECK(r.trace.back().hsic >= 0.0);
}

TEST_CASE("classifier head: gamma = 0 leaves the classifier at its initial value") {
  const SyntheticDataset ds = small_dataset("thm1b", 1000, 11, true);
  std::vector<int> y;
  for (Index i = 0; i < ds.c.rows(); ++i) y.push_back(ds.c(i, 0) > 2.5 ? 1 : 0);
  SolverConfig cfg = small_config(2);
  cfg.mode = Mode::Homogeneous;
  cfg.gamma = 0.0;
  cfg.epochs = 1;
  const FitResult one = fit_with_classifier(ds.x1, y, ds.x2, cfg);
  cfg.epochs = 3;
  const FitResult three = fit_with_classifier(ds.x1, y, ds.x2, cfg);
  REQUIRE(one.classifier);
  CHECK(one.classifier->w == three.classifier->w);
  CHECK(one.classifier->b == three.classifier->b);
  CHECK(one.q1->q != three.q1->q);
}

TEST_CASE("classifier head: separable blobs transfer to the second view") {
  // shared code: two well separated blobs; privates: small noise
  const std::size_t n = 3000;
  Rng rng(12);
  Matrix c(n, 2), p1(n, 1), p2(n, 1);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng.index(2));
    const double s = y[i] ? 3.0 : -3.0;
    c(static_cast<Index>(i), 0) = s + rng.normal();
    c(static_cast<Index>(i), 1) = s + rng.normal();
    p1(static_cast<Index>(i), 0) = rng.uniform(-1, 1);
    p2(static_cast<Index>(i), 0) = rng.uniform(-1, 1);
  }
  Rng mrng(13);
  MixingModel mix;
  mix.d_shared = 2;
  mix.homogeneous = true;
  mix.a1 = mrng.normal_matrix(3, 3) + Matrix::Identity(3, 3) * 2.0;
  mix.a2 = mix.a1;
  const SyntheticDataset ds = mix_latents(c, p1, p2, mix);
  SolverConfig cfg = small_config(2);
  cfg.mode = Mode::Homogeneous;
  cfg.epochs = 5;
  const FitResult r = fit_with_classifier(ds.x1, y, ds.x2, cfg);
  REQUIRE(r.classifier);
  const auto pred = r.classifier->predict(r.q2->apply(ds.x2));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) ok += pred[i] == y[i];
  CHECK(static_cast<double>(ok) / n >= 0.95);
  std::vector<int> bad = y;
  bad[0] = -1;
  CHECK_THROWS_AS(fit_with_classifier(ds.x1, bad, ds.x2, cfg), ValidationError);
  CHECK_THROWS_AS(fit_with_classifier(ds.x1, y, ds.x2, cfg, 1), ValidationError);
}
