#pragma once

// Divergence estimators with analytic gradients: unbiased kernel MMD, an
// adversarial discriminator trained by hand-written backpropagation, and the
// biased HSIC independence statistic.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "usca/numerics.hpp"

namespace usca {

/// Gaussian RBF kernel k(x, y) = exp(-|x - y|^2 / (2 sigma^2)), optionally a
/// sum over several bandwidths. The bandwidth is either fixed or set by the
/// median heuristic on a pooled subsample (at most `median_subsample` rows),
/// resolved once and then frozen.
struct KernelSpec {
  enum class Rule { Fixed, Median };

  Rule rule = Rule::Median;
  double sigma = 1.0;                 // used when rule == Fixed
  std::vector<double> scales{1.0};    // multipliers applied to the base sigma
  std::size_t median_subsample = 2000;

  static KernelSpec fixed(double sigma);
  static KernelSpec median(std::vector<double> scales = {1.0});

  /// Concrete bandwidths. `pooled` is consulted for the median rule only.
  std::vector<double> resolve(const Matrix& pooled) const;

  nlohmann::json to_json() const;
  static KernelSpec from_json(const nlohmann::json& j);
};

struct MmdResult {
  double value = 0.0;
  Matrix grad_x;
  Matrix grad_y;
};

/// Unbiased U-statistic estimate of MMD^2 between the rows of x and y and its
/// exact gradient. A list of bandwidths gives the sum of the per-bandwidth
/// estimates. Can be negative.
MmdResult mmd2_unbiased(const Matrix& x, const Matrix& y, const std::vector<double>& sigmas,
                        bool want_grad_y = true);
MmdResult mmd2_unbiased(const Matrix& x, const Matrix& y, double sigma, bool want_grad_y = true);

struct HsicResult {
  double value = 0.0;
  Matrix grad_u;
  Matrix grad_v;
};

/// Biased HSIC (1/m^2) tr(K H L H) with Gaussian kernels on u and v.
HsicResult hsic_biased(const Matrix& u, const Matrix& v, double sigma_u, double sigma_v);

/// Fully connected discriminator R^d -> (0, 1): leaky-ReLU hidden layers and a
/// sigmoid output. Weights are initialized uniform in
/// +-sqrt(6 / (fan_in + fan_out)) with zero biases.
class Discriminator {
 public:
  static constexpr double kLeakySlope = 0.2;
  static const std::vector<std::size_t>& default_widths();

  Discriminator() = default;
  Discriminator(std::size_t input_dim, std::vector<std::size_t> hidden, Rng& rng);

  std::size_t input_dim() const noexcept { return input_dim_; }
  const std::vector<std::size_t>& hidden_widths() const noexcept { return hidden_; }
  std::size_t parameter_count() const;

  /// Weights (out x in) and biases (1 x out) interleaved: W0, b0, W1, b1, ...
  std::vector<Matrix>& parameters() noexcept { return params_; }
  const std::vector<Matrix>& parameters() const noexcept { return params_; }

  /// Probabilities, one per input row.
  Vector forward(const Matrix& x) const;

  /// Pre-sigmoid logits plus the activations needed for backprop.
  struct Trace {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    Vector logits;
  };
  Trace forward_trace(const Matrix& x) const;

  /// Given d loss / d logit per row, accumulates parameter gradients (same
  /// layout as parameters()) and returns d loss / d input.
  Matrix backward(const Trace& trace, const Vector& dlogits, std::vector<Matrix>& grads) const;

  nlohmann::json to_json() const;
  static Discriminator from_json(const nlohmann::json& j);

 private:
  std::size_t input_dim_ = 0;
  std::vector<std::size_t> hidden_;
  std::vector<Matrix> params_;
};

struct GanResult {
  /// mean log f(u) + mean log(1 - f(v)), probabilities clamped to [1e-7, 1-1e-7].
  double value = 0.0;
  /// Smoothed binary cross-entropy minimized by the discriminator
  /// (targets 1 - s for u, s for v).
  double disc_loss = 0.0;
  std::vector<Matrix> grad_params;  // of disc_loss
  Matrix grad_u;                    // of value
  Matrix grad_v;                    // of value
  double accuracy = 0.0;            // fraction of rows classified on the right side of 1/2
};

inline constexpr double kLabelSmoothing = 0.2;
inline constexpr double kProbClamp = 1e-7;

GanResult gan_value_and_grads(const Discriminator& f, const Matrix& u, const Matrix& v,
                              double label_smoothing = kLabelSmoothing);

}  // namespace usca
