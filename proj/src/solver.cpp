#include "usca/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "usca/error.hpp"
#include "usca/log.hpp"

namespace usca {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Unaligned: return "unaligned";
    case Mode::Homogeneous: return "homogeneous";
    case Mode::WeaklySupervised: return "weakly-supervised";
    case Mode::WithPrivate: return "with-private";
  }
  return "unknown";
}

std::string to_string(MatcherKind m) { return m == MatcherKind::Mmd ? "mmd" : "adversarial"; }

Mode mode_from_string(const std::string& s) {
  if (s == "unaligned") return Mode::Unaligned;
  if (s == "homogeneous") return Mode::Homogeneous;
  if (s == "weakly-supervised") return Mode::WeaklySupervised;
  if (s == "with-private") return Mode::WithPrivate;
  throw ValidationError("unknown solver mode '" + s + "'");
}

MatcherKind matcher_from_string(const std::string& s) {
  if (s == "mmd") return MatcherKind::Mmd;
  if (s == "adversarial") return MatcherKind::Adversarial;
  throw ValidationError("unknown matcher '" + s + "'");
}

void SolverConfig::validate() const {
  if (d_shared == 0) throw ValidationError("solver: d_shared must be >= 1");
  for (double w : {lambda, beta, omega, rho, gamma})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("solver: loss weights must be >= 0");
  for (double lr : {lr_q, lr_f, lr_private, lr_classifier})
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("solver: learning rates must be > 0");
  if (batch < 2) throw ValidationError("solver: batch must be >= 2");
  if (epochs == 0) throw ValidationError("solver: epochs must be >= 1");
  if (disc_steps == 0) throw ValidationError("solver: disc_steps must be >= 1");
  if (mode == Mode::WithPrivate && (d_private1 == 0 || d_private2 == 0))
    throw ValidationError("solver: with-private mode needs d_private1, d_private2 >= 1");
  if (restarts > 0 && screen_epochs + polish_epochs >= epochs)
    throw ValidationError("solver: screen_epochs + polish_epochs must be below epochs");
  if (!(screen_lr_q >= 0.0) || !std::isfinite(screen_lr_q))
    throw ValidationError("solver: screen_lr_q must be >= 0");
  if (private_warmup_epochs > 0 && private_warmup_epochs >= epochs)
    throw ValidationError("solver: private_warmup_epochs must be below epochs");
  if (orientation_search_epoch > 0) {
    if (orientation_search_epoch >= epochs)
      throw ValidationError("solver: orientation_search_epoch must be below epochs");
    if (matcher != MatcherKind::Mmd)
      throw ValidationError("solver: orientation search needs the MMD matcher");
    if (orientation_candidates == 0) throw ValidationError("solver: orientation_candidates must be >= 1");
  }
}

nlohmann::json SolverConfig::to_json() const {
  return {{"mode", to_string(mode)},
          {"matcher", to_string(matcher)},
          {"d_shared", d_shared},
          {"d_private1", d_private1},
          {"d_private2", d_private2},
          {"lambda", lambda},
          {"beta", beta},
          {"omega", omega},
          {"rho", rho},
          {"gamma", gamma},
          {"lr_q", lr_q},
          {"lr_f", lr_f},
          {"lr_private", lr_private},
          {"lr_classifier", lr_classifier},
          {"classifier_lr_gamma", classifier_lr_gamma},
          {"classifier_lr_decay", classifier_lr_decay},
          {"batch", batch},
          {"epochs", epochs},
          {"disc_steps", disc_steps},
          {"disc_widths", disc_widths},
          {"kernel", kernel.to_json()},
          {"hsic_kernel", hsic_kernel.to_json()},
          {"init_noise", init_noise},
          {"restarts", restarts},
          {"screen_epochs", screen_epochs},
          {"screen_lr_q", screen_lr_q},
          {"polish_epochs", polish_epochs},
          {"orientation_search_epoch", orientation_search_epoch},
          {"orientation_candidates", orientation_candidates},
          {"private_warmup_epochs", private_warmup_epochs},
          {"rank_tol", rank_tol},
          {"divergence_factor", divergence_factor},
          {"eval_rows", eval_rows},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed}};
}

SolverConfig SolverConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{
      "mode", "matcher", "d_shared", "d_private1", "d_private2", "lambda", "beta", "omega",
      "rho", "gamma", "lr_q", "lr_f", "lr_private", "lr_classifier", "classifier_lr_gamma",
      "classifier_lr_decay", "batch", "epochs", "disc_steps", "disc_widths", "kernel",
      "hsic_kernel", "init_noise", "restarts", "screen_epochs",
      "screen_lr_q", "polish_epochs",
      "orientation_search_epoch", "orientation_candidates", "private_warmup_epochs", "rank_tol",
      "divergence_factor", "eval_rows", "checkpoint_every", "seed"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("solver config: unknown key '" + key + "'");
  SolverConfig c;
  if (j.contains("mode")) c.mode = mode_from_string(j["mode"]);
  if (j.contains("matcher")) c.matcher = matcher_from_string(j["matcher"]);
  c.d_shared = j.value("d_shared", c.d_shared);
  c.d_private1 = j.value("d_private1", c.d_private1);
  c.d_private2 = j.value("d_private2", c.d_private2);
  c.lambda = j.value("lambda", c.lambda);
  c.beta = j.value("beta", c.beta);
  c.omega = j.value("omega", c.omega);
  c.rho = j.value("rho", c.rho);
  c.gamma = j.value("gamma", c.gamma);
  c.lr_q = j.value("lr_q", c.lr_q);
  c.lr_f = j.value("lr_f", c.lr_f);
  c.lr_private = j.value("lr_private", c.lr_private);
  c.lr_classifier = j.value("lr_classifier", c.lr_classifier);
  c.classifier_lr_gamma = j.value("classifier_lr_gamma", c.classifier_lr_gamma);
  c.classifier_lr_decay = j.value("classifier_lr_decay", c.classifier_lr_decay);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.disc_steps = j.value("disc_steps", c.disc_steps);
  c.disc_widths = j.value("disc_widths", c.disc_widths);
  if (j.contains("kernel")) c.kernel = KernelSpec::from_json(j["kernel"]);
  if (j.contains("hsic_kernel")) c.hsic_kernel = KernelSpec::from_json(j["hsic_kernel"]);
  c.init_noise = j.value("init_noise", c.init_noise);
  c.restarts = j.value("restarts", c.restarts);
  c.screen_epochs = j.value("screen_epochs", c.screen_epochs);
  c.screen_lr_q = j.value("screen_lr_q", c.screen_lr_q);
  c.polish_epochs = j.value("polish_epochs", c.polish_epochs);
  c.orientation_search_epoch = j.value("orientation_search_epoch", c.orientation_search_epoch);
  c.orientation_candidates = j.value("orientation_candidates", c.orientation_candidates);
  c.private_warmup_epochs = j.value("private_warmup_epochs", c.private_warmup_epochs);
  c.rank_tol = j.value("rank_tol", c.rank_tol);
  c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
  c.eval_rows = j.value("eval_rows", c.eval_rows);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void AnchorSet::validate(std::size_t n1, std::size_t n2) const {
  std::vector<bool> seen1(n1, false), seen2(n2, false);
  for (const auto& [i, j] : pairs) {
    if (i >= n1 || j >= n2) throw ValidationError("anchors: index out of range");
    if (seen1[i] || seen2[j]) throw ValidationError("anchors: repeated index");
    seen1[i] = seen2[j] = true;
  }
}

Matrix LinearClassifier::probabilities(const Matrix& features) const {
  Matrix logits = features * w.transpose();
  logits.rowwise() += b.row(0);
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

std::vector<int> LinearClassifier::predict(const Matrix& features) const {
  const Matrix p = probabilities(features);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Index i = 0; i < p.rows(); ++i) {
    Index k = 0;
    p.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

ValueAndGrad whitening_penalty(const Matrix& q, const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || q.cols() != sigma.rows())
    throw DimensionError("whitening_penalty: shape mismatch");
  const Matrix qs = q * sigma;
  const Matrix e = qs * q.transpose() - Matrix::Identity(q.rows(), q.rows());
  return {e.squaredNorm(), 4.0 * e * qs};
}

AnchorPenalty anchor_penalty(const Matrix& q1, const Matrix& q2, const Matrix& anchors1,
                             const Matrix& anchors2, double beta) {
  if (anchors1.rows() != anchors2.rows()) throw DimensionError("anchor_penalty: row mismatch");
  if (anchors1.cols() != q1.cols() || anchors2.cols() != q2.cols() || q1.rows() != q2.rows())
    throw DimensionError("anchor_penalty: shape mismatch");
  AnchorPenalty r;
  const Matrix d = anchors1 * q1.transpose() - anchors2 * q2.transpose();
  r.value = beta * d.squaredNorm();
  r.grad_q1 = 2.0 * beta * d.transpose() * anchors1;
  r.grad_q2 = -2.0 * beta * d.transpose() * anchors2;
  return r;
}

CrossEntropy softmax_cross_entropy(const LinearClassifier& clf, const Matrix& features,
                                   const std::vector<int>& labels, double gamma) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DimensionError("cross_entropy: label count mismatch");
  const Index k = clf.w.rows();
  Matrix p = clf.probabilities(features);
  const double inv = 1.0 / static_cast<double>(features.rows());
  CrossEntropy r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k) throw ValidationError("cross_entropy: label out of range");
    const auto row = static_cast<Index>(i);
    r.value -= gamma * inv * std::log(std::max(p(row, y), 1e-300));
    p(row, y) -= 1.0;
  }
  p *= gamma * inv;  // d loss / d logits
  r.grad_w = p.transpose() * features;
  r.grad_b = p.colwise().sum();
  r.grad_features = p * clf.w;
  return r;
}

void require_centered(const Matrix& x, const char* what) {
  require_finite(x, what);
  const RowVector mu = x.colwise().mean();
  const RowVector sd = ((x.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Index j = 0; j < x.cols(); ++j) {
    if (std::abs(mu(j)) > 1e-6 * sd(j) && std::abs(mu(j)) > 1e-12) {
      std::ostringstream os;
      os << what << ": column " << j << " is not centered (mean " << mu(j) << ", std " << sd(j) << ")";
      throw ValidationError(os.str());
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

// Everything but the matcher: whitening, anchor and HSIC terms. `u`, `v` are
// the shared projections of the batches; gradients are added to g1/g2 (shared)
// and written to out.grad.qp1/qp2.
void add_penalties(const Params& p, const Matrix& x1, const Matrix& x2, const Matrix& u,
                   const Matrix& v, const ObjectiveContext& ctx, ObjectiveValue& out, Matrix& g1,
                   Matrix& g2) {
  const bool homog = ctx.mode == Mode::Homogeneous;
  const Matrix& q2 = homog ? p.q1 : p.q2;
  const ValueAndGrad r1 = whitening_penalty(p.q1, ctx.sigma1);
  const ValueAndGrad r2 = whitening_penalty(q2, ctx.sigma2);
  out.terms.rq1 = r1.value;
  out.terms.rq2 = r2.value;
  g1 += ctx.lambda * r1.grad;
  g2 += ctx.lambda * r2.grad;
  out.terms.total += ctx.lambda * (r1.value + r2.value);

  if (ctx.anchors1.rows() > 0) {
    const AnchorPenalty a = anchor_penalty(p.q1, q2, ctx.anchors1, ctx.anchors2, ctx.beta);
    out.terms.anchor = a.value;
    out.terms.total += a.value;
    g1 += a.grad_q1;
    g2 += a.grad_q2;
  }

  if (ctx.mode == Mode::WithPrivate) {
    const Matrix up = x1 * p.qp1.transpose();
    const Matrix vp = x2 * p.qp2.transpose();
    const HsicResult h1 = hsic_biased(u, up, ctx.hsic_sigma_c1, ctx.hsic_sigma_p1);
    const HsicResult h2 = hsic_biased(v, vp, ctx.hsic_sigma_c2, ctx.hsic_sigma_p2);
    const ValueAndGrad rp1 = whitening_penalty(p.qp1, ctx.sigma1);
    const ValueAndGrad rp2 = whitening_penalty(p.qp2, ctx.sigma2);
    out.terms.hsic = h1.value + h2.value;
    out.terms.total += ctx.rho * out.terms.hsic + ctx.omega * (rp1.value + rp2.value);
    if (ctx.hsic_shared_grad) {
      g1 += ctx.rho * h1.grad_u.transpose() * x1;
      g2 += ctx.rho * h2.grad_u.transpose() * x2;
    }
    out.grad.qp1 = ctx.rho * h1.grad_v.transpose() * x1 + ctx.omega * rp1.grad;
    out.grad.qp2 = ctx.rho * h2.grad_v.transpose() * x2 + ctx.omega * rp2.grad;
  }
}

void finish_grads(const ObjectiveContext& ctx, ObjectiveValue& out, Matrix&& g1, Matrix&& g2) {
  if (ctx.mode == Mode::Homogeneous) {
    out.grad.q1 = g1 + g2;
  } else {
    out.grad.q1 = std::move(g1);
    out.grad.q2 = std::move(g2);
  }
}

}  // namespace

ObjectiveValue mmd_objective(const Params& p, const Matrix& x1, const Matrix& x2,
                             const ObjectiveContext& ctx) {
  const Matrix& q2 = ctx.mode == Mode::Homogeneous ? p.q1 : p.q2;
  ObjectiveValue out;
  const Matrix u = x1 * p.q1.transpose();
  const Matrix v = x2 * q2.transpose();
  const MmdResult m = mmd2_unbiased(u, v, ctx.bandwidths);
  out.terms.matcher = m.value;
  out.terms.total = m.value;
  Matrix g1 = m.grad_x.transpose() * x1;
  Matrix g2 = m.grad_y.transpose() * x2;
  add_penalties(p, x1, x2, u, v, ctx, out, g1, g2);
  finish_grads(ctx, out, std::move(g1), std::move(g2));
  return out;
}

namespace {

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t from,
                   std::size_t count) {
  Matrix out(static_cast<Index>(count), x.cols());
  for (std::size_t k = 0; k < count; ++k)
    out.row(static_cast<Index>(k)) = x.row(static_cast<Index>(idx[from + k]));
  return out;
}

Matrix random_orthonormal_rows(std::size_t k, std::size_t n, Rng& rng) {
  const Matrix g = rng.normal_matrix(static_cast<Index>(n), static_cast<Index>(k));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(g)};
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  return q.transpose();
}

// Orthogonal k x k candidates for re-orienting one view. k = 1: both signs;
// k = 2: `count` evenly spaced rotations and their reflections; k >= 3: the
// identity, one reflection and Haar-random orthogonal matrices up to `count`.
std::vector<Matrix> orientation_set(std::size_t k, std::size_t count, Rng& rng) {
  const auto n = static_cast<Index>(k);
  std::vector<Matrix> out;
  Matrix flip = Matrix::Identity(n, n);
  flip(n - 1, n - 1) = -1.0;
  if (k == 1) return {Matrix::Identity(1, 1), flip};
  if (k == 2) {
    for (std::size_t i = 0; i < count; ++i) {
      const double t = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(count);
      Matrix r(2, 2);
      r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
      out.push_back(r);
      out.push_back(r * flip);
    }
    return out;
  }
  out.push_back(Matrix::Identity(n, n));
  out.push_back(flip);
  while (out.size() < std::max<std::size_t>(count, 2)) {
    const Matrix g = rng.normal_matrix(n, n);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(g)};
    Eigen::MatrixXd q = qr.householderQ();
    // sign fix so the draw is Haar distributed
    for (Index j = 0; j < n; ++j)
      if (qr.matrixQR()(j, j) < 0) q.col(j) *= -1.0;
    out.emplace_back(q);
  }
  return out;
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v))
    throw DivergenceError(term, std::string("solver diverged: non-finite ") + term + " term");
}

class Trainer {
 public:
  Trainer(const Matrix& x1, const Matrix& x2, const SolverConfig& cfg, const AnchorSet& anchors,
          const std::vector<int>* labels, std::size_t num_classes)
      : x1_(x1), x2_(x2), cfg_(cfg), labels_(labels), num_classes_(num_classes), root_(cfg.seed) {
    cfg_.validate();
    if (x1.rows() < 2 || x2.rows() < 2) throw DimensionError("solver: need at least 2 rows per view");
    if (cfg_.mode == Mode::Homogeneous && x1.cols() != x2.cols())
      throw DimensionError("solver: homogeneous mode needs equal observation dimensions");
    if (cfg_.mode == Mode::WeaklySupervised && anchors.empty())
      throw ValidationError("solver: weakly supervised mode needs anchors");
    require_centered(x1, "view 1");
    require_centered(x2, "view 2");
    anchors.validate(static_cast<std::size_t>(x1.rows()), static_cast<std::size_t>(x2.rows()));

    ctx_.mode = cfg_.mode;
    ctx_.sigma1 = empirical_covariance(x1, false);
    ctx_.sigma2 = empirical_covariance(x2, false);
    ctx_.lambda = cfg_.lambda;
    ctx_.beta = cfg_.beta;
    ctx_.omega = cfg_.omega;
    ctx_.rho = cfg_.rho;
    if (cfg_.mode == Mode::WeaklySupervised) {
      ctx_.anchors1.resize(static_cast<Index>(anchors.size()), x1.cols());
      ctx_.anchors2.resize(static_cast<Index>(anchors.size()), x2.cols());
      for (std::size_t k = 0; k < anchors.size(); ++k) {
        ctx_.anchors1.row(static_cast<Index>(k)) = x1.row(static_cast<Index>(anchors.pairs[k].first));
        ctx_.anchors2.row(static_cast<Index>(k)) = x2.row(static_cast<Index>(anchors.pairs[k].second));
      }
    }

    Rng eval_rng = root_.substream("solver/eval-rows");
    const auto n1 = static_cast<std::size_t>(x1.rows());
    const auto n2 = static_cast<std::size_t>(x2.rows());
    eval1_ = gather_rows(x1, eval_rng.permutation(n1), 0, std::min(n1, cfg_.eval_rows));
    eval2_ = gather_rows(x2, eval_rng.permutation(n2), 0, std::min(n2, cfg_.eval_rows));
    if (labels_) {
      // classifier checkpoints need labels aligned with the eval rows
      eval_labels_perm_ = root_.substream("solver/eval-rows").permutation(n1);
      eval_labels_perm_.resize(static_cast<std::size_t>(eval1_.rows()));
    }
    batch_ = std::min({cfg_.batch, n1, n2});
    steps_per_epoch_ = std::max<std::size_t>(1, std::min(n1, n2) / batch_);
  }

  FitResult run() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Run> starts;
    starts.push_back(make_run(0));
    resolve_bandwidths(starts.front().p);
    for (std::size_t r = 1; r <= cfg_.restarts; ++r) starts.push_back(make_run(r));

    std::size_t chosen = 0;
    if (starts.size() > 1) {
      std::optional<double> best;
      std::optional<DivergenceError> last_failure;
      const double explore = cfg_.screen_lr_q > 0 ? cfg_.screen_lr_q : cfg_.lr_q;
      for (std::size_t r = 0; r < starts.size(); ++r) {
        try {
          set_lr_q(starts[r], explore);
          train_epochs(starts[r], cfg_.screen_epochs);
          set_lr_q(starts[r], cfg_.lr_q);
          train_epochs(starts[r], cfg_.polish_epochs);
        } catch (const DivergenceError& e) {
          // a start that blows up while screening is dropped, not fatal
          log::warn("solver: start " + std::to_string(r) + " dropped: " + e.what());
          last_failure = e;
          continue;
        }
        const double score = selection_score(starts[r].p);
        log::debug("solver: start " + std::to_string(r) + " score " + std::to_string(score));
        if (!best || score < *best) {
          best = score;
          chosen = r;
        }
      }
      if (!best) throw *last_failure;
    }
    Run& run = starts[chosen];
    train_epochs(run, cfg_.epochs - run.epochs_done);

    FitResult out;
    auto proj = [](Matrix q, const Matrix& cov) {
      return std::make_shared<const Projection>(Projection{std::move(q), cov});
    };
    out.q1 = proj(run.p.q1, ctx_.sigma1);
    if (cfg_.mode == Mode::Homogeneous) {
      out.q2 = out.q1;
    } else {
      out.q2 = proj(run.p.q2, ctx_.sigma2);
    }
    if (cfg_.mode == Mode::WithPrivate) {
      out.qp1 = proj(run.p.qp1, ctx_.sigma1);
      out.qp2 = proj(run.p.qp2, ctx_.sigma2);
    }
    if (run.clf) out.classifier = run.clf;
    if (run.disc) out.discriminator = run.disc;
    out.trace = std::move(run.trace);
    out.checkpoints = std::move(run.checkpoints);
    out.bandwidths = ctx_.bandwidths;
    out.chosen_start = chosen;
    out.config = cfg_;
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

 private:
  struct Run {
    Params p;
    AdamState a_q1, a_q2, a_qp1, a_qp2;
    std::optional<Discriminator> disc;
    std::vector<AdamState> a_disc;
    std::optional<LinearClassifier> clf;
    AdamState a_w, a_b;
    Rng batch_rng{0};
    std::vector<TraceRow> trace;
    std::vector<Checkpoint> checkpoints;
    std::size_t index = 0;
    std::size_t epochs_done = 0;
    double initial_matcher = 0;
  };

  Run make_run(std::size_t index) {
    Run r;
    const std::string tag = "solver/start-" + std::to_string(index);
    Rng init = root_.substream(tag + "/init");
    const auto dc = cfg_.d_shared;
    if (index == 0) {
      r.p.q1 = whitening_init(ctx_.sigma1, 0, dc, init);
      if (cfg_.mode != Mode::Homogeneous) r.p.q2 = whitening_init(ctx_.sigma2, 0, dc, init);
    } else {
      r.p.q1 = rotated_init(ctx_.sigma1, dc, init);
      if (cfg_.mode != Mode::Homogeneous) r.p.q2 = rotated_init(ctx_.sigma2, dc, init);
    }
    if (cfg_.mode == Mode::WithPrivate) {
      r.p.qp1 = whitening_init(ctx_.sigma1, dc, cfg_.d_private1, init);
      r.p.qp2 = whitening_init(ctx_.sigma2, dc, cfg_.d_private2, init);
      r.a_qp1 = AdamState(r.p.qp1.rows(), r.p.qp1.cols(), {.lr = cfg_.lr_private});
      r.a_qp2 = AdamState(r.p.qp2.rows(), r.p.qp2.cols(), {.lr = cfg_.lr_private});
    }
    r.a_q1 = AdamState(r.p.q1.rows(), r.p.q1.cols(), {.lr = cfg_.lr_q});
    if (r.p.q2.size() > 0) r.a_q2 = AdamState(r.p.q2.rows(), r.p.q2.cols(), {.lr = cfg_.lr_q});
    if (cfg_.matcher == MatcherKind::Adversarial) {
      Rng drng = root_.substream(tag + "/discriminator");
      r.disc = Discriminator(dc, cfg_.disc_widths, drng);
      for (const auto& prm : r.disc->parameters())
        r.a_disc.emplace_back(prm.rows(), prm.cols(), AdamConfig{.lr = cfg_.lr_f});
    }
    if (labels_) {
      Rng crng = root_.substream(tag + "/classifier");
      LinearClassifier clf;
      clf.w = crng.normal_matrix(static_cast<Index>(num_classes_), static_cast<Index>(dc), 0.01);
      clf.b = Matrix::Zero(1, static_cast<Index>(num_classes_));
      r.a_w = AdamState(clf.w.rows(), clf.w.cols(), {.lr = cfg_.lr_classifier});
      r.a_b = AdamState(clf.b.rows(), clf.b.cols(), {.lr = cfg_.lr_classifier});
      r.clf = std::move(clf);
    }
    r.batch_rng = root_.substream(tag + "/batches");
    r.index = index;
    return r;
  }

  Matrix whitening_init(const Matrix& sigma, std::size_t offset, std::size_t k, Rng& rng) const {
    const Matrix w = spectral_whitening(sigma, cfg_.rank_tol);
    if (static_cast<std::size_t>(w.rows()) < offset + k)
      throw RankError("solver: covariance rank is below the number of requested components");
    const Matrix q = w.middleRows(static_cast<Index>(offset), static_cast<Index>(k));
    return q + rng.normal_matrix(q.rows(), q.cols(), cfg_.init_noise);
  }

  // A random orthonormal combination of all whitened directions.
  Matrix rotated_init(const Matrix& sigma, std::size_t k, Rng& rng) const {
    const Matrix w = spectral_whitening(sigma, cfg_.rank_tol);
    if (static_cast<std::size_t>(w.rows()) < k)
      throw RankError("solver: covariance rank is below the number of requested components");
    const Matrix u = random_orthonormal_rows(k, static_cast<std::size_t>(w.rows()), rng);
    const Matrix q = u * w;
    return q + rng.normal_matrix(q.rows(), q.cols(), cfg_.init_noise);
  }

  void resolve_bandwidths(const Params& p) {
    const Matrix& q2 = cfg_.mode == Mode::Homogeneous ? p.q1 : p.q2;
    const Matrix u = eval1_ * p.q1.transpose();
    const Matrix v = eval2_ * q2.transpose();
    Matrix pooled(u.rows() + v.rows(), u.cols());
    // interleave so that the median subsample draws from both views
    const Index half = static_cast<Index>(cfg_.kernel.median_subsample / 2);
    const Index tu = std::min(u.rows(), half), tv = std::min(v.rows(), half);
    pooled.resize(tu + tv, u.cols());
    pooled << u.topRows(tu), v.topRows(tv);
    ctx_.bandwidths = cfg_.kernel.resolve(pooled);
    if (cfg_.mode == Mode::WithPrivate) {
      auto bw = [&](const Matrix& z) {
        const Index t = std::min<Index>(z.rows(), static_cast<Index>(cfg_.hsic_kernel.median_subsample));
        return cfg_.hsic_kernel.resolve(z.topRows(t)).front();
      };
      ctx_.hsic_sigma_c1 = bw(u);
      ctx_.hsic_sigma_c2 = bw(v);
      ctx_.hsic_sigma_p1 = bw(eval1_ * p.qp1.transpose());
      ctx_.hsic_sigma_p2 = bw(eval2_ * p.qp2.transpose());
    }
  }

  static void set_lr_q(Run& r, double lr) {
    r.a_q1.set_lr(lr);
    if (r.p.q2.size() > 0) r.a_q2.set_lr(lr);
  }

  double selection_score(const Params& p) const { return mmd_objective(p, eval1_, eval2_, ctx_).terms.total; }

  Checkpoint checkpoint(const Run& r) const {
    Checkpoint c;
    c.epoch = r.epochs_done;
    if (cfg_.matcher == MatcherKind::Mmd) {
      const ObjectiveValue v = mmd_objective(r.p, eval1_, eval2_, ctx_);
      c.matcher = v.terms.matcher;
      c.total = v.terms.total;
    } else {
      const Matrix& q2 = cfg_.mode == Mode::Homogeneous ? r.p.q1 : r.p.q2;
      const Matrix u = eval1_ * r.p.q1.transpose();
      const Matrix v = eval2_ * q2.transpose();
      ObjectiveValue ov;
      Matrix g1 = Matrix::Zero(r.p.q1.rows(), r.p.q1.cols());
      Matrix g2 = Matrix::Zero(q2.rows(), q2.cols());
      const GanResult gan = gan_value_and_grads(*r.disc, u, v);
      ov.terms.total = gan.value;
      add_penalties(r.p, eval1_, eval2_, u, v, ctx_, ov, g1, g2);
      c.matcher = gan.value;
      c.total = ov.terms.total;
    }
    if (r.clf) {
      std::vector<int> lab;
      for (auto i : eval_labels_perm_) lab.push_back((*labels_)[i]);
      const CrossEntropy ce =
          softmax_cross_entropy(*r.clf, eval1_ * r.p.q1.transpose(), lab, cfg_.gamma);
      c.total += ce.value;
    }
    return c;
  }

  void train_epochs(Run& r, std::size_t count) {
    if (r.epochs_done == 0) {
      r.checkpoints.push_back(checkpoint(r));
      r.initial_matcher = r.checkpoints.back().matcher;
    }
    const auto n1 = static_cast<std::size_t>(x1_.rows());
    const auto n2 = static_cast<std::size_t>(x2_.rows());
    for (std::size_t e = 0; e < count; ++e) {
      const auto perm1 = r.batch_rng.permutation(n1);
      const auto perm2 = r.batch_rng.permutation(n2);
      TraceRow row;
      row.epoch = r.epochs_done + 1;
      for (std::size_t s = 0; s < steps_per_epoch_; ++s) {
        const Matrix b1 = gather_rows(x1_, perm1, s * batch_, batch_);
        const Matrix b2 = gather_rows(x2_, perm2, s * batch_, batch_);
        std::vector<int> lab;
        if (labels_) {
          lab.reserve(batch_);
          for (std::size_t k = 0; k < batch_; ++k) lab.push_back((*labels_)[perm1[s * batch_ + k]]);
        }
        const ObjectiveTerms t = step(r, b1, b2, lab);
        row.matcher += t.matcher;
        row.rq1 += t.rq1;
        row.rq2 += t.rq2;
        row.anchor += t.anchor;
        row.hsic += t.hsic;
        row.total += t.total;
      }
      const double inv = 1.0 / static_cast<double>(steps_per_epoch_);
      row.matcher *= inv;
      row.rq1 *= inv;
      row.rq2 *= inv;
      row.anchor *= inv;
      row.hsic *= inv;
      row.total *= inv;
      r.trace.push_back(row);
      ++r.epochs_done;
      if (cfg_.observer)
        cfg_.observer(r.index, row, r.p.q1, cfg_.mode == Mode::Homogeneous ? r.p.q1 : r.p.q2);
      if (cfg_.matcher == MatcherKind::Mmd) {
        const double limit = cfg_.divergence_factor * std::max(std::abs(r.initial_matcher), 1e-3);
        if (row.matcher > limit) {
          std::ostringstream os;
          os << "solver diverged: matcher loss " << row.matcher << " at epoch " << row.epoch
             << " exceeds " << cfg_.divergence_factor << "x its initial value";
          throw DivergenceError("matcher", os.str());
        }
      }
      if (r.epochs_done == cfg_.orientation_search_epoch && cfg_.mode != Mode::Homogeneous)
        reorient(r);
      if (r.epochs_done % std::max<std::size_t>(cfg_.checkpoint_every, 1) == 0 ||
          r.epochs_done == cfg_.epochs)
        r.checkpoints.push_back(checkpoint(r));
    }
  }

  void reorient(Run& r) {
    Rng rng = root_.substream("solver/start-" + std::to_string(r.index) + "/orientation");
    const auto cands = orientation_set(cfg_.d_shared, cfg_.orientation_candidates, rng);
    std::size_t best = 0;
    double best_score = 0.0;
    Params trial = r.p;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      trial.q2 = cands[i] * r.p.q2;
      const double score = mmd_objective(trial, eval1_, eval2_, ctx_).terms.total;
      if (i == 0 || score < best_score) {
        best_score = score;
        best = i;
      }
    }
    r.p.q2 = cands[best] * r.p.q2;
    if (!cands[best].isIdentity()) r.a_q2 = AdamState(r.p.q2.rows(), r.p.q2.cols(), r.a_q2.config());
    log::debug("solver: start " + std::to_string(r.index) + " orientation candidate " +
               std::to_string(best) + " of " + std::to_string(cands.size()));
  }

  ObjectiveTerms step(Run& r, const Matrix& b1, const Matrix& b2, const std::vector<int>& lab) {
    const bool homog = cfg_.mode == Mode::Homogeneous;
    ctx_.hsic_shared_grad = r.epochs_done >= cfg_.private_warmup_epochs;
    ObjectiveValue ov;
    if (cfg_.matcher == MatcherKind::Mmd) {
      ov = mmd_objective(r.p, b1, b2, ctx_);
    } else {
      const Matrix& q2 = homog ? r.p.q1 : r.p.q2;
      const Matrix u = b1 * r.p.q1.transpose();
      const Matrix v = b2 * q2.transpose();
      auto& params = r.disc->parameters();
      for (std::size_t k = 0; k < cfg_.disc_steps; ++k) {
        const GanResult d = gan_value_and_grads(*r.disc, u, v);
        check_finite(d.disc_loss, "discriminator");
        for (std::size_t i = 0; i < params.size(); ++i) r.a_disc[i].step(params[i], d.grad_params[i]);
      }
      const GanResult g = gan_value_and_grads(*r.disc, u, v);
      ov.terms.matcher = g.value;
      ov.terms.total = g.value;
      Matrix g1 = g.grad_u.transpose() * b1;
      Matrix g2 = g.grad_v.transpose() * b2;
      add_penalties(r.p, b1, b2, u, v, ctx_, ov, g1, g2);
      finish_grads(ctx_, ov, std::move(g1), std::move(g2));
    }
    check_finite(ov.terms.matcher, "matcher");
    check_finite(ov.terms.rq1, "rq1");
    check_finite(ov.terms.rq2, "rq2");
    check_finite(ov.terms.anchor, "anchor");
    check_finite(ov.terms.hsic, "hsic");

    if (r.clf) {
      const Matrix feats = b1 * r.p.q1.transpose();
      const CrossEntropy ce = softmax_cross_entropy(*r.clf, feats, lab, cfg_.gamma);
      check_finite(ce.value, "classifier");
      ov.terms.ce = ce.value;
      ov.terms.total += ce.value;
      ov.grad.q1 += ce.grad_features.transpose() * b1;
      const double t = static_cast<double>(r.a_w.steps());
      const double lr =
          cfg_.lr_classifier * std::pow(1.0 + cfg_.classifier_lr_gamma * t, -cfg_.classifier_lr_decay);
      r.a_w.set_lr(lr);
      r.a_b.set_lr(lr);
      r.a_w.step(r.clf->w, ce.grad_w);
      r.a_b.step(r.clf->b, ce.grad_b);
    }

    r.a_q1.step(r.p.q1, ov.grad.q1);
    if (!homog) r.a_q2.step(r.p.q2, ov.grad.q2);
    if (cfg_.mode == Mode::WithPrivate) {
      r.a_qp1.step(r.p.qp1, ov.grad.qp1);
      r.a_qp2.step(r.p.qp2, ov.grad.qp2);
    }
    return ov.terms;
  }

  const Matrix& x1_;
  const Matrix& x2_;
  SolverConfig cfg_;
  const std::vector<int>* labels_;
  std::size_t num_classes_;
  Rng root_;
  ObjectiveContext ctx_;
  Matrix eval1_, eval2_;
  std::vector<std::size_t> eval_labels_perm_;
  std::size_t batch_ = 0;
  std::size_t steps_per_epoch_ = 0;
};

}  // namespace

FitResult fit(const Matrix& x1, const Matrix& x2, const SolverConfig& config, const AnchorSet& anchors) {
  if (config.mode == Mode::WithPrivate) return fit_with_private(x1, x2, config);
  if (config.mode != Mode::WeaklySupervised && !anchors.empty())
    throw ValidationError("solver: anchors given but mode is not weakly-supervised");
  return Trainer(x1, x2, config, anchors, nullptr, 0).run();
}

FitResult fit_with_private(const Matrix& x1, const Matrix& x2, const SolverConfig& config) {
  SolverConfig cfg = config;
  cfg.mode = Mode::WithPrivate;
  return Trainer(x1, x2, cfg, {}, nullptr, 0).run();
}

FitResult fit_with_classifier(const Matrix& x1, const std::vector<int>& labels1, const Matrix& x2,
                              const SolverConfig& config, std::size_t num_classes) {
  if (config.mode != Mode::Homogeneous)
    throw ValidationError("solver: classifier head requires homogeneous mode");
  if (labels1.size() != static_cast<std::size_t>(x1.rows()))
    throw DimensionError("solver: label count does not match view 1 rows");
  int max_label = -1;
  for (int y : labels1) {
    if (y < 0) throw ValidationError("solver: label out of range");
    max_label = std::max(max_label, y);
  }
  if (num_classes == 0) num_classes = static_cast<std::size_t>(max_label + 1);
  if (static_cast<std::size_t>(max_label) >= num_classes) throw ValidationError("solver: label out of range");
  return Trainer(x1, x2, config, {}, &labels1, num_classes).run();
}

}  // namespace usca
