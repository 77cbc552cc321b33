#include "usca/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "usca/error.hpp"

namespace usca {

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ValidationError(std::string("distribution: ") + what + " must be finite and > 0");
  }
}

void require_finite_param(double v, const char* what) {
  if (!std::isfinite(v)) throw ValidationError(std::string("distribution: ") + what + " must be finite");
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double wrap_angle(double t) {
  constexpr double pi = std::numbers::pi;
  t = std::fmod(t + pi, 2.0 * pi);
  if (t < 0) t += 2.0 * pi;
  return t - pi;
}

// Best & Fisher (1979) rejection sampler.
double sample_von_mises(double mu, double kappa, Rng& rng) {
  constexpr double pi = std::numbers::pi;
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double u3 = rng.uniform();
    const double z = std::cos(pi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || (u2 > 0.0 && std::log(c / u2) + 1.0 - c >= 0.0)) {
      const double theta = (u3 > 0.5 ? 1.0 : -1.0) * std::acos(std::clamp(f, -1.0, 1.0));
      return wrap_angle(mu + theta);
    }
  }
}

// Moments of the wrapped von Mises angle on [-pi, pi) by trapezoid quadrature.
std::pair<double, double> von_mises_moments(double mu, double kappa) {
  constexpr double pi = std::numbers::pi;
  constexpr int kNodes = 20000;
  const double h = 2.0 * pi / kNodes;
  double z = 0, m1 = 0, m2 = 0;
  for (int i = 0; i < kNodes; ++i) {
    const double t = -pi + (i + 0.5) * h;
    const double w = std::exp(kappa * (std::cos(t - mu) - 1.0));
    z += w;
    m1 += w * t;
    m2 += w * t * t;
  }
  m1 /= z;
  m2 /= z;
  return {m1, m2 - m1 * m1};
}

}  // namespace

DistributionSpec DistributionSpec::normal(double mu, double sigma) {
  require_finite_param(mu, "mu");
  require_positive(sigma, "sigma");
  return DistributionSpec(NormalDist{mu, sigma});
}

DistributionSpec DistributionSpec::uniform(double a, double b) {
  require_finite_param(a, "a");
  require_finite_param(b, "b");
  if (!(a < b)) throw ValidationError("distribution: uniform requires a < b");
  return DistributionSpec(UniformDist{a, b});
}

DistributionSpec DistributionSpec::laplace(double mu, double b) {
  require_finite_param(mu, "mu");
  require_positive(b, "b");
  return DistributionSpec(LaplaceDist{mu, b});
}

DistributionSpec DistributionSpec::gamma(double shape, double scale) {
  require_positive(shape, "shape");
  require_positive(scale, "scale");
  return DistributionSpec(GammaDist{shape, scale});
}

DistributionSpec DistributionSpec::beta(double alpha, double beta) {
  require_positive(alpha, "alpha");
  require_positive(beta, "beta");
  return DistributionSpec(BetaDist{alpha, beta});
}

DistributionSpec DistributionSpec::von_mises(double mu, double kappa) {
  require_finite_param(mu, "mu");
  require_positive(kappa, "kappa");
  return DistributionSpec(VonMisesDist{mu, kappa});
}

DistributionSpec DistributionSpec::gaussian_mixture(std::vector<MixtureComponent> components) {
  if (components.empty()) throw ValidationError("distribution: empty mixture");
  double total = 0.0;
  for (const auto& c : components) {
    require_positive(c.weight, "mixture weight");
    require_finite_param(c.mu, "mixture mean");
    require_positive(c.sigma, "mixture sigma");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("distribution: mixture weights must sum to 1");
  return DistributionSpec(GaussianMixtureDist{std::move(components)});
}

std::string DistributionSpec::name() const {
  return std::visit(Overloaded{[](const NormalDist&) { return std::string("normal"); },
                               [](const UniformDist&) { return std::string("uniform"); },
                               [](const LaplaceDist&) { return std::string("laplace"); },
                               [](const GammaDist&) { return std::string("gamma"); },
                               [](const BetaDist&) { return std::string("beta"); },
                               [](const VonMisesDist&) { return std::string("vonmises"); },
                               [](const GaussianMixtureDist&) { return std::string("gmm"); }},
                    v_);
}

double DistributionSpec::mean() const {
  return std::visit(
      Overloaded{[](const NormalDist& d) { return d.mu; },
                 [](const UniformDist& d) { return 0.5 * (d.a + d.b); },
                 [](const LaplaceDist& d) { return d.mu; },
                 [](const GammaDist& d) { return d.shape * d.scale; },
                 [](const BetaDist& d) { return d.alpha / (d.alpha + d.beta); },
                 [](const VonMisesDist& d) { return von_mises_moments(d.mu, d.kappa).first; },
                 [](const GaussianMixtureDist& d) {
                   double m = 0;
                   for (const auto& c : d.components) m += c.weight * c.mu;
                   return m;
                 }},
      v_);
}

double DistributionSpec::variance() const {
  return std::visit(
      Overloaded{[](const NormalDist& d) { return d.sigma * d.sigma; },
                 [](const UniformDist& d) { return (d.b - d.a) * (d.b - d.a) / 12.0; },
                 [](const LaplaceDist& d) { return 2.0 * d.b * d.b; },
                 [](const GammaDist& d) { return d.shape * d.scale * d.scale; },
                 [](const BetaDist& d) {
                   const double s = d.alpha + d.beta;
                   return d.alpha * d.beta / (s * s * (s + 1.0));
                 },
                 [](const VonMisesDist& d) { return von_mises_moments(d.mu, d.kappa).second; },
                 [](const GaussianMixtureDist& d) {
                   double m = 0, m2 = 0;
                   for (const auto& c : d.components) {
                     m += c.weight * c.mu;
                     m2 += c.weight * (c.sigma * c.sigma + c.mu * c.mu);
                   }
                   return m2 - m * m;
                 }},
      v_);
}

nlohmann::json DistributionSpec::to_json() const {
  return std::visit(
      Overloaded{
          [](const NormalDist& d) { return nlohmann::json{{"kind", "normal"}, {"mu", d.mu}, {"sigma", d.sigma}}; },
          [](const UniformDist& d) { return nlohmann::json{{"kind", "uniform"}, {"a", d.a}, {"b", d.b}}; },
          [](const LaplaceDist& d) { return nlohmann::json{{"kind", "laplace"}, {"mu", d.mu}, {"b", d.b}}; },
          [](const GammaDist& d) {
            return nlohmann::json{{"kind", "gamma"}, {"shape", d.shape}, {"scale", d.scale}};
          },
          [](const BetaDist& d) { return nlohmann::json{{"kind", "beta"}, {"alpha", d.alpha}, {"beta", d.beta}}; },
          [](const VonMisesDist& d) {
            return nlohmann::json{{"kind", "vonmises"}, {"mu", d.mu}, {"kappa", d.kappa}};
          },
          [](const GaussianMixtureDist& d) {
            nlohmann::json comps = nlohmann::json::array();
            for (const auto& c : d.components)
              comps.push_back({{"weight", c.weight}, {"mu", c.mu}, {"sigma", c.sigma}});
            return nlohmann::json{{"kind", "gmm"}, {"components", comps}};
          }},
      v_);
}

DistributionSpec DistributionSpec::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "normal") return normal(j.at("mu"), j.at("sigma"));
  if (kind == "uniform") return uniform(j.at("a"), j.at("b"));
  if (kind == "laplace") return laplace(j.at("mu"), j.at("b"));
  if (kind == "gamma") return gamma(j.at("shape"), j.at("scale"));
  if (kind == "beta") return beta(j.at("alpha"), j.at("beta"));
  if (kind == "vonmises") return von_mises(j.at("mu"), j.at("kappa"));
  if (kind == "gmm") {
    std::vector<MixtureComponent> comps;
    for (const auto& c : j.at("components"))
      comps.push_back({c.at("weight").get<double>(), c.at("mu").get<double>(), c.at("sigma").get<double>()});
    return gaussian_mixture(std::move(comps));
  }
  throw ValidationError("distribution: unknown kind '" + kind + "'");
}

Vector sample_distribution(const DistributionSpec& spec, std::size_t n, Rng& rng) {
  Vector out(static_cast<Index>(n));
  std::visit(
      Overloaded{
          [&](const NormalDist& d) {
            for (auto& x : out) x = rng.normal(d.mu, d.sigma);
          },
          [&](const UniformDist& d) {
            for (auto& x : out) x = rng.uniform(d.a, d.b);
          },
          [&](const LaplaceDist& d) {
            for (auto& x : out) {
              const double u = rng.uniform() - 0.5;
              x = d.mu - d.b * (u < 0 ? -1.0 : 1.0) * std::log1p(-2.0 * std::abs(u));
            }
          },
          [&](const GammaDist& d) {
            for (auto& x : out) x = rng.gamma(d.shape, d.scale);
          },
          [&](const BetaDist& d) {
            for (auto& x : out) {
              const double a = rng.gamma(d.alpha, 1.0);
              const double b = rng.gamma(d.beta, 1.0);
              x = a / (a + b);
            }
          },
          [&](const VonMisesDist& d) {
            for (auto& x : out) x = sample_von_mises(d.mu, d.kappa, rng);
          },
          [&](const GaussianMixtureDist& d) {
            std::vector<double> cdf;
            double acc = 0;
            for (const auto& c : d.components) cdf.push_back(acc += c.weight);
            for (auto& x : out) {
              const double u = rng.uniform() * acc;
              auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
              const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()),
                                                   d.components.size() - 1);
              x = rng.normal(d.components[k].mu, d.components[k].sigma);
            }
          }},
      spec.value());
  return out;
}

void LatentSpec::validate() const {
  if (shared.empty()) throw ValidationError("latent spec: need at least one shared component");
}

nlohmann::json LatentSpec::to_json() const {
  auto list = [](const std::vector<DistributionSpec>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& d : v) a.push_back(d.to_json());
    return a;
  };
  return {{"shared", list(shared)}, {"private1", list(private1)}, {"private2", list(private2)}};
}

LatentSpec LatentSpec::from_json(const nlohmann::json& j) {
  auto list = [](const nlohmann::json& a) {
    std::vector<DistributionSpec> v;
    for (const auto& d : a) v.push_back(DistributionSpec::from_json(d));
    return v;
  };
  LatentSpec s{list(j.at("shared")), list(j.value("private1", nlohmann::json::array())),
               list(j.value("private2", nlohmann::json::array()))};
  s.validate();
  return s;
}

namespace {

bool full_column_rank(const Matrix& a) {
  if (a.rows() < a.cols()) return false;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  return s(0) > 0.0 && s(s.size() - 1) > 1e-8 * s(0);
}

}  // namespace

void MixingModel::validate() const {
  if (d_shared == 0) throw ValidationError("mixing: d_shared must be >= 1");
  for (int q = 1; q <= 2; ++q) {
    const Matrix& m = a(q);
    if (static_cast<std::size_t>(m.cols()) < d_shared)
      throw DimensionError("mixing: A has fewer columns than d_shared");
    require_finite(m, "mixing matrix");
    if (!full_column_rank(m)) throw RankError("mixing: A^(" + std::to_string(q) + ") is rank deficient");
  }
  if (homogeneous && (a1.rows() != a2.rows() || a1.cols() != a2.cols() || a1 != a2))
    throw ValidationError("mixing: homogeneous model requires A1 == A2");
}

nlohmann::json MixingTemplate::to_json() const {
  return {{"d1", d1}, {"d2", d2}, {"homogeneous", homogeneous}};
}

MixingTemplate MixingTemplate::from_json(const nlohmann::json& j) {
  MixingTemplate t;
  t.d1 = j.value("d1", std::size_t{0});
  t.d2 = j.value("d2", std::size_t{0});
  t.homogeneous = j.value("homogeneous", false);
  return t;
}

MixingModel random_mixing(const LatentSpec& latent, const MixingTemplate& tmpl, Rng& rng) {
  latent.validate();
  const std::size_t k1 = latent.d_shared() + latent.private1.size();
  const std::size_t k2 = latent.d_shared() + latent.private2.size();
  const std::size_t d1 = tmpl.d1 ? tmpl.d1 : k1;
  const std::size_t d2 = tmpl.d2 ? tmpl.d2 : k2;
  if (d1 < k1 || d2 < k2) throw DimensionError("mixing: observation dimension below latent dimension");
  if (tmpl.homogeneous && (k1 != k2 || d1 != d2))
    throw DimensionError("mixing: homogeneous model needs equal private and observation dimensions");
  constexpr int kMaxTries = 100;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    MixingModel m;
    m.d_shared = latent.d_shared();
    m.homogeneous = tmpl.homogeneous;
    m.a1 = rng.normal_matrix(static_cast<Index>(d1), static_cast<Index>(k1));
    m.a2 = tmpl.homogeneous ? m.a1 : rng.normal_matrix(static_cast<Index>(d2), static_cast<Index>(k2));
    if (full_column_rank(m.a1) && full_column_rank(m.a2)) return m;
  }
  throw RankError("mixing: could not draw full-column-rank mixing matrices");
}

Matrix SyntheticDataset::c_for_view2() const {
  Matrix out(c.rows(), c.cols());
  for (std::size_t i = 0; i < alignment.size(); ++i)
    out.row(static_cast<Index>(alignment[i])) = c.row(static_cast<Index>(i));
  return out;
}

SyntheticDataset mix_latents(const Matrix& c, const Matrix& p1, const Matrix& p2,
                             const MixingModel& mixing) {
  mixing.validate();
  const Index n = c.rows();
  if (n < 2) throw DimensionError("mix_latents: need at least 2 rows");
  if (p1.rows() != n || p2.rows() != n) throw DimensionError("mix_latents: latent row mismatch");
  if (static_cast<std::size_t>(c.cols()) != mixing.d_shared ||
      c.cols() + p1.cols() != mixing.a1.cols() || c.cols() + p2.cols() != mixing.a2.cols())
    throw DimensionError("mix_latents: latent widths do not match mixing matrices");

  SyntheticDataset ds;
  Matrix z1(n, mixing.a1.cols()), z2(n, mixing.a2.cols());
  z1 << c, p1;
  z2 << c, p2;
  ds.x1 = z1 * mixing.a1.transpose();
  ds.x2 = z2 * mixing.a2.transpose();
  ds.mean1 = center_columns(ds.x1);
  ds.mean2 = center_columns(ds.x2);
  ds.c = c;
  ds.p1 = p1;
  ds.p2 = p2;
  ds.mixing = mixing;
  ds.alignment.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ds.alignment[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
  return ds;
}

SyntheticDataset generate_dataset(const LatentSpec& latent, const MixingModel& mixing, std::size_t n,
                                  Rng& rng) {
  latent.validate();
  if (n < 2) throw DimensionError("generate_dataset: n must be >= 2");
  auto draw = [&](const std::vector<DistributionSpec>& specs) {
    Matrix m(static_cast<Index>(n), static_cast<Index>(specs.size()));
    for (std::size_t k = 0; k < specs.size(); ++k)
      m.col(static_cast<Index>(k)) = sample_distribution(specs[k], n, rng);
    return m;
  };
  const Matrix c = draw(latent.shared);
  const Matrix p1 = draw(latent.private1);
  const Matrix p2 = draw(latent.private2);
  return mix_latents(c, p1, p2, mixing);
}

SyntheticDataset holdout_and_shuffle(SyntheticDataset ds, double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("holdout fraction must be in [0, 1)");
  const Index n = ds.x1.rows();
  const auto n_test = static_cast<Index>(std::floor(fraction * static_cast<double>(n)));
  if (n - n_test < 2) throw DimensionError("holdout: too few training rows");

  // assumes rows are still aligned (identity alignment)
  for (std::size_t i = 0; i < ds.alignment.size(); ++i)
    if (ds.alignment[i] != i) throw ValidationError("holdout: dataset is already shuffled");

  HeldOut test;
  test.x1 = ds.x1.topRows(n_test);
  test.x2 = ds.x2.topRows(n_test);
  test.c = ds.c.topRows(n_test);
  test.p1 = ds.p1.topRows(n_test);
  test.p2 = ds.p2.topRows(n_test);

  const Index n_train = n - n_test;
  Matrix x1 = ds.x1.bottomRows(n_train);
  Matrix x2 = ds.x2.bottomRows(n_train);
  const RowVector shift1 = center_columns(x1);
  const RowVector shift2 = center_columns(x2);
  test.x1.rowwise() -= shift1;
  test.x2.rowwise() -= shift2;
  ds.mean1 += shift1;
  ds.mean2 += shift2;

  const Matrix c = ds.c.bottomRows(n_train);
  const Matrix p1 = ds.p1.bottomRows(n_train);
  const Matrix p2 = ds.p2.bottomRows(n_train);
  const auto perm = rng.permutation(static_cast<std::size_t>(n_train));
  // new x2 row perm[i] receives old x2 row i
  Matrix x2s(n_train, x2.cols()), p2s(n_train, p2.cols());
  std::vector<std::size_t> alignment(static_cast<std::size_t>(n_train));
  for (Index i = 0; i < n_train; ++i) {
    const auto dst = static_cast<Index>(perm[static_cast<std::size_t>(i)]);
    x2s.row(dst) = x2.row(i);
    p2s.row(dst) = p2.row(i);
    alignment[static_cast<std::size_t>(i)] = static_cast<std::size_t>(dst);
  }
  ds.x1 = std::move(x1);
  ds.x2 = std::move(x2s);
  ds.c = c;
  ds.p1 = p1;
  ds.p2 = std::move(p2s);
  ds.alignment = std::move(alignment);
  ds.test = std::move(test);
  return ds;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"thm1a", "thm1b", "thm3-laplace", "private-appxG"};
  return names;
}

Preset preset(std::string_view name, std::uint64_t seed) {
  using D = DistributionSpec;
  Preset p;
  p.name = std::string(name);
  if (name == "thm1a") {
    // three-component mixture with means ~ N(0, 10) (variance) and variance 2
    Rng rng = Rng(seed).substream("preset/thm1a/mixture-means");
    std::vector<MixtureComponent> comps;
    for (int k = 0; k < 3; ++k) comps.push_back({1.0 / 3.0, rng.normal(0.0, std::sqrt(10.0)), std::sqrt(2.0)});
    comps[2].weight = 1.0 - comps[0].weight - comps[1].weight;
    p.latent.shared = {D::gaussian_mixture(comps), D::gamma(1.0, 3.0)};
    p.latent.private1 = {D::laplace(1.0, 6.5)};
    p.latent.private2 = {D::uniform(-10.0, 10.0)};
  } else if (name == "thm1b") {
    p.latent.shared = {D::von_mises(2.5, 2.0), D::von_mises(2.5, 2.0)};
    p.latent.private1 = {D::laplace(1.0, 6.5)};
    p.latent.private2 = {D::gamma(0.5, 3.0)};
  } else if (name == "thm3-laplace") {
    p.latent.shared = {D::laplace(0.0, 6.5), D::laplace(0.0, 6.5), D::laplace(0.0, 6.5)};
    p.latent.private1 = {D::uniform(-10.0, 10.0)};
    p.latent.private2 = {D::gamma(0.5, 3.0)};
  } else if (name == "private-appxG") {
    p.latent.shared = {D::von_mises(2.5, 2.0), D::von_mises(2.5, 2.0)};
    p.latent.private1 = {D::beta(1.0, 3.0)};
    p.latent.private2 = {D::gamma(0.5, 3.0)};
  } else {
    std::ostringstream os;
    os << "unknown preset '" << name << "'; valid presets:";
    for (const auto& n : preset_names()) os << ' ' << n;
    throw ValidationError(os.str());
  }
  return p;
}

SyntheticDataset generate_from_preset(const Preset& p, std::size_t n, std::uint64_t seed,
                                      double holdout_fraction) {
  const Rng root(seed);
  Rng mix_rng = root.substream("datagen/mixing");
  Rng lat_rng = root.substream("datagen/latents");
  Rng split_rng = root.substream("datagen/shuffle");
  const MixingModel mixing = random_mixing(p.latent, p.mixing, mix_rng);
  return holdout_and_shuffle(generate_dataset(p.latent, mixing, n, lat_rng), holdout_fraction, split_rng);
}

}  // namespace usca
