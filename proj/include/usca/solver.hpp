#pragma once

// Fitting procedures for unaligned shared component analysis: learn
// projections Q^(1), Q^(2) such that Q^(1) x^(1) and Q^(2) x^(2) have the same
// distribution while Q^(q) Sigma_q Q^(q)' stays close to the identity.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "usca/distmatch.hpp"
#include "usca/numerics.hpp"

namespace usca {

enum class Mode { Unaligned, Homogeneous, WeaklySupervised, WithPrivate };
enum class MatcherKind { Mmd, Adversarial };

std::string to_string(Mode m);
std::string to_string(MatcherKind m);
Mode mode_from_string(const std::string& s);
MatcherKind matcher_from_string(const std::string& s);

struct TraceRow {
  std::size_t epoch = 0;
  double matcher = 0, rq1 = 0, rq2 = 0, anchor = 0, hsic = 0, total = 0;
};

struct SolverConfig {
  Mode mode = Mode::Unaligned;
  MatcherKind matcher = MatcherKind::Mmd;
  std::size_t d_shared = 0;      // required
  std::size_t d_private1 = 0;    // WithPrivate only
  std::size_t d_private2 = 0;

  double lambda = 0.1;  // whitening penalty on shared projections
  double beta = 0.01;   // anchor penalty
  double omega = 10.0;  // whitening penalty on private projections
  double rho = 50.0;    // HSIC penalty
  double gamma = 0.1;   // classifier cross-entropy

  double lr_q = 0.009;
  double lr_f = 0.00008;
  double lr_private = 0.001;
  double lr_classifier = 0.02;
  // classifier lr_t = lr_classifier * (1 + classifier_lr_gamma * t)^(-classifier_lr_decay)
  double classifier_lr_gamma = 0.001;
  double classifier_lr_decay = 0.75;

  std::size_t batch = 1000;
  std::size_t epochs = 50;
  std::size_t disc_steps = 1;  // discriminator updates per projection update
  std::vector<std::size_t> disc_widths = Discriminator::default_widths();

  KernelSpec kernel = KernelSpec::median({0.25, 0.5, 1.0, 2.0});
  KernelSpec hsic_kernel = KernelSpec::median();

  double init_noise = 0.01;
  /// Extra random starts screened before the main run (0 = single start).
  /// A start that diverges while screening is dropped with a warning.
  std::size_t restarts = 0;
  std::size_t screen_epochs = 5;
  /// Projection learning rate while screening (0 = lr_q). Each start then
  /// runs polish_epochs at lr_q before it is scored, so that the score is
  /// not dominated by step-size jitter.
  double screen_lr_q = 0.0;
  std::size_t polish_epochs = 0;
  /// After this many epochs of each start (0 = never), replace Q2 by R Q2
  /// for the orthogonal R among `orientation_candidates` that minimizes the
  /// objective on the evaluation rows. Views are initialized independently,
  /// so their shared coordinates can start reflected or rotated against each
  /// other; gradient steps undo that only slowly. MMD matcher only.
  std::size_t orientation_search_epoch = 0;
  std::size_t orientation_candidates = 24;
  /// WithPrivate: for this many epochs the HSIC term only moves the private
  /// projections. Without it the shared projections can shrink one output
  /// towards zero variance, which lowers HSIC faster than it raises R(Q).
  std::size_t private_warmup_epochs = 0;

  double rank_tol = 1e-10;
  double divergence_factor = 10.0;
  std::size_t eval_rows = 2000;   // rows per view for checkpoint losses
  std::size_t checkpoint_every = 10;
  std::uint64_t seed = 0;

  /// Called after every epoch with the start index, the trace row and the
  /// current projections. Not serialized.
  std::function<void(std::size_t start, const TraceRow&, const Matrix& q1, const Matrix& q2)>
      observer;

  void validate() const;
  nlohmann::json to_json() const;
  static SolverConfig from_json(const nlohmann::json& j);
};

/// A learned projection together with the covariance it was whitened against.
struct Projection {
  Matrix q;
  Matrix covariance;

  Matrix apply(const Matrix& x) const { return x * q.transpose(); }
};

/// Known aligned pairs (row i of view 1, row j of view 2).
struct AnchorSet {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  /// Indices in range, no repeated left or right index.
  void validate(std::size_t n1, std::size_t n2) const;
};

struct Checkpoint {
  std::size_t epoch = 0;
  double matcher = 0;
  double total = 0;
};

struct LinearClassifier {
  Matrix w;  // K x dC
  Matrix b;  // 1 x K

  /// Softmax class probabilities for already-projected features.
  Matrix probabilities(const Matrix& features) const;
  std::vector<int> predict(const Matrix& features) const;
};

struct FitResult {
  std::shared_ptr<const Projection> q1;
  std::shared_ptr<const Projection> q2;  // same object as q1 in Homogeneous mode
  std::shared_ptr<const Projection> qp1;
  std::shared_ptr<const Projection> qp2;
  std::optional<LinearClassifier> classifier;
  std::optional<Discriminator> discriminator;
  std::vector<TraceRow> trace;  // one row per epoch
  std::vector<Checkpoint> checkpoints;
  std::vector<double> bandwidths;
  std::size_t chosen_start = 0;
  double wall_seconds = 0.0;
  SolverConfig config;

  bool homogeneous() const noexcept { return q1 == q2; }
};

/// R(Q) = ||Q Sigma Q' - I||_F^2 and its gradient 4 (Q Sigma Q' - I) Q Sigma.
ValueAndGrad whitening_penalty(const Matrix& q, const Matrix& sigma);

/// beta * sum_l ||Q1 a1_l - Q2 a2_l||^2 over anchor rows, with gradients.
struct AnchorPenalty {
  double value = 0.0;
  Matrix grad_q1;
  Matrix grad_q2;
};
AnchorPenalty anchor_penalty(const Matrix& q1, const Matrix& q2, const Matrix& anchors1,
                             const Matrix& anchors2, double beta);

/// gamma * mean cross-entropy of softmax(features W' + b) against labels,
/// with gradients w.r.t. W, b and the features.
struct CrossEntropy {
  double value = 0.0;
  Matrix grad_w;
  Matrix grad_b;
  Matrix grad_features;
};
CrossEntropy softmax_cross_entropy(const LinearClassifier& clf, const Matrix& features,
                                   const std::vector<int>& labels, double gamma);

/// Throws ValidationError if some column mean exceeds 1e-6 times its std.
void require_centered(const Matrix& x, const char* what);

/// Distribution-matching fit in the mode given by config (Unaligned,
/// Homogeneous or WeaklySupervised; WithPrivate dispatches to fit_with_private).
FitResult fit(const Matrix& x1, const Matrix& x2, const SolverConfig& config,
              const AnchorSet& anchors = {});

/// Joint shared/private fit: shared projections matched across views,
/// private projections whitened and HSIC-decoupled from the shared ones.
FitResult fit_with_private(const Matrix& x1, const Matrix& x2, const SolverConfig& config);

/// Homogeneous fit with a linear softmax head trained on view-1 labels.
FitResult fit_with_classifier(const Matrix& x1, const std::vector<int>& labels1, const Matrix& x2,
                              const SolverConfig& config, std::size_t num_classes = 0);

/// Trainable parameters. q2 is unused in Homogeneous mode; qp1/qp2 are empty
/// unless private projections are trained.
struct Params {
  Matrix q1, q2, qp1, qp2;
};

struct ObjectiveTerms {
  double matcher = 0, rq1 = 0, rq2 = 0, anchor = 0, hsic = 0, ce = 0, total = 0;
};

/// Everything the kernel-matching objective needs besides parameters and data.
struct ObjectiveContext {
  Mode mode = Mode::Unaligned;
  Matrix sigma1, sigma2;
  std::vector<double> bandwidths;        // MMD
  double hsic_sigma_c1 = 1, hsic_sigma_p1 = 1, hsic_sigma_c2 = 1, hsic_sigma_p2 = 1;
  Matrix anchors1, anchors2;             // rows of view 1 / view 2
  double lambda = 0, beta = 0, omega = 0, rho = 0;
  bool hsic_shared_grad = true;  // false: HSIC gradient reaches QP1/QP2 only
};

struct ObjectiveValue {
  ObjectiveTerms terms;
  Params grad;
};

/// MMD-matched objective on one pair of batches with exact gradients:
/// MMD^2(Q1 x1, Q2 x2) + lambda (R(Q1) + R(Q2)) [+ anchor] [+ omega R(QP) + rho HSIC].
ObjectiveValue mmd_objective(const Params& p, const Matrix& x1, const Matrix& x2,
                             const ObjectiveContext& ctx);

}  // namespace usca
