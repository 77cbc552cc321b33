#pragma once

// Synthetic multimodal linear mixtures x^(q) = A^(q) [c; p^(q)] with hidden
// ground truth kept for evaluation.

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "usca/numerics.hpp"

namespace usca {

struct NormalDist { double mu; double sigma; };
struct UniformDist { double a; double b; };
struct LaplaceDist { double mu; double b; };
struct GammaDist { double shape; double scale; };
struct BetaDist { double alpha; double beta; };
struct VonMisesDist { double mu; double kappa; };
struct MixtureComponent { double weight; double mu; double sigma; };
struct GaussianMixtureDist { std::vector<MixtureComponent> components; };

/// Declarative 1-D marginal. Construct through the named factories, which
/// validate parameters.
class DistributionSpec {
 public:
  using Variant = std::variant<NormalDist, UniformDist, LaplaceDist, GammaDist, BetaDist,
                               VonMisesDist, GaussianMixtureDist>;

  static DistributionSpec normal(double mu, double sigma);
  static DistributionSpec uniform(double a, double b);
  static DistributionSpec laplace(double mu, double b);
  static DistributionSpec gamma(double shape, double scale);
  static DistributionSpec beta(double alpha, double beta);
  static DistributionSpec von_mises(double mu, double kappa);
  static DistributionSpec gaussian_mixture(std::vector<MixtureComponent> components);

  const Variant& value() const noexcept { return v_; }
  std::string name() const;

  /// Analytic mean and variance (von Mises: of the wrapped angle in [-pi, pi)).
  double mean() const;
  double variance() const;

  nlohmann::json to_json() const;
  static DistributionSpec from_json(const nlohmann::json& j);

 private:
  explicit DistributionSpec(Variant v) : v_(std::move(v)) {}
  Variant v_;
};

/// i.i.d. draws from `spec`.
Vector sample_distribution(const DistributionSpec& spec, std::size_t n, Rng& rng);

/// One distribution per coordinate, each coordinate drawn independently.
struct LatentSpec {
  std::vector<DistributionSpec> shared;
  std::vector<DistributionSpec> private1;
  std::vector<DistributionSpec> private2;

  std::size_t d_shared() const noexcept { return shared.size(); }
  std::size_t d_private(int q) const noexcept { return q == 1 ? private1.size() : private2.size(); }
  void validate() const;

  nlohmann::json to_json() const;
  static LatentSpec from_json(const nlohmann::json& j);
};

struct MixingModel {
  Matrix a1;  // d1 x (dC + dP1)
  Matrix a2;  // d2 x (dC + dP2)
  std::size_t d_shared = 0;
  bool homogeneous = false;

  const Matrix& a(int q) const { return q == 1 ? a1 : a2; }
  /// Shapes, full column rank and the homogeneous identity.
  void validate() const;
};

/// Observation dimensions and homogeneity for a randomly drawn MixingModel.
struct MixingTemplate {
  std::size_t d1 = 0;  // 0 means square: dC + dP1
  std::size_t d2 = 0;
  bool homogeneous = false;

  nlohmann::json to_json() const;
  static MixingTemplate from_json(const nlohmann::json& j);
};

/// A^(q) with i.i.d. N(0, 1) entries, redrawn (up to 100 times) until the
/// smallest singular value exceeds 1e-8 times the largest.
MixingModel random_mixing(const LatentSpec& latent, const MixingTemplate& tmpl, Rng& rng);

/// Aligned test rows held out from training.
struct HeldOut {
  Matrix x1, x2;  // row i of x1 and x2 share c
  Matrix c, p1, p2;
  bool empty() const noexcept { return x1.rows() == 0; }
};

struct SyntheticDataset {
  Matrix x1, x2;  // centered observations
  Matrix c;       // shared latents in x1 row order
  Matrix p1;      // x1 row order
  Matrix p2;      // x2 row order
  /// alignment[i] is the x2 row that shares c with x1 row i.
  std::vector<std::size_t> alignment;
  MixingModel mixing;
  RowVector mean1, mean2;  // offsets removed by centering
  HeldOut test;

  /// Shared latents in x2 row order.
  Matrix c_for_view2() const;
};

/// Mixes given latent tables (rows already aligned: row i of p1 and p2 pairs
/// with row i of c) and centers. Alignment is the identity.
SyntheticDataset mix_latents(const Matrix& c, const Matrix& p1, const Matrix& p2,
                             const MixingModel& mixing);

/// Draws n shared codes and per-view privates, mixes both views from the
/// same c per row and centers.
SyntheticDataset generate_dataset(const LatentSpec& latent, const MixingModel& mixing,
                                  std::size_t n, Rng& rng);

/// Reserves the first `fraction` of rows as an aligned test split, re-centers
/// the remaining training rows (test rows get the same shift) and shuffles the
/// second training view.
SyntheticDataset holdout_and_shuffle(SyntheticDataset ds, double fraction, Rng& rng);

struct Preset {
  std::string name;
  LatentSpec latent;
  MixingTemplate mixing;
};

const std::vector<std::string>& preset_names();

/// Named experiment configurations. Random pieces of a preset (the Gaussian
/// mixture means of thm1a) are drawn once from `seed`.
Preset preset(std::string_view name, std::uint64_t seed);

/// preset + random_mixing + generate_dataset + holdout_and_shuffle, each from
/// its own substream of `seed`.
SyntheticDataset generate_from_preset(const Preset& p, std::size_t n, std::uint64_t seed,
                                      double holdout_fraction = 0.05);

}  // namespace usca
