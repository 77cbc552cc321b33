#include "usca/distmatch.hpp"

#include <algorithm>
#include <cmath>

#include "usca/error.hpp"

namespace usca {

KernelSpec KernelSpec::fixed(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("kernel bandwidth must be > 0");
  KernelSpec k;
  k.rule = Rule::Fixed;
  k.sigma = sigma;
  return k;
}

KernelSpec KernelSpec::median(std::vector<double> scales) {
  KernelSpec k;
  k.rule = Rule::Median;
  k.scales = std::move(scales);
  return k;
}

std::vector<double> KernelSpec::resolve(const Matrix& pooled) const {
  if (scales.empty()) throw ValidationError("kernel: empty bandwidth scale list");
  double base = sigma;
  if (rule == Rule::Median) {
    const Index take = std::min<Index>(pooled.rows(), static_cast<Index>(median_subsample));
    base = median_pairwise_distance(pooled.topRows(take));
  }
  std::vector<double> out;
  for (double s : scales) {
    const double bw = base * s;
    if (!(bw > 0.0) || !std::isfinite(bw)) throw ValidationError("kernel: resolved bandwidth is not positive");
    out.push_back(bw);
  }
  return out;
}

nlohmann::json KernelSpec::to_json() const {
  return {{"rule", rule == Rule::Fixed ? "fixed" : "median"},
          {"sigma", sigma},
          {"scales", scales},
          {"median_subsample", median_subsample}};
}

KernelSpec KernelSpec::from_json(const nlohmann::json& j) {
  KernelSpec k;
  const std::string rule = j.value("rule", "median");
  if (rule == "fixed") {
    k.rule = Rule::Fixed;
  } else if (rule == "median") {
    k.rule = Rule::Median;
  } else {
    throw ValidationError("kernel: unknown rule '" + rule + "'");
  }
  k.sigma = j.value("sigma", 1.0);
  k.scales = j.value("scales", std::vector<double>{1.0});
  k.median_subsample = j.value("median_subsample", std::size_t{2000});
  if (k.rule == Rule::Fixed && !(k.sigma > 0.0)) throw ValidationError("kernel bandwidth must be > 0");
  return k;
}

namespace {

// Gradient of sum_ij w_ij k(a_i, b_j) w.r.t. a, where k is Gaussian with
// bandwidth sigma and `wk` already holds w_ij * k_ij.
Matrix rbf_grad_left(const Matrix& wk, const Matrix& a, const Matrix& b, double sigma) {
  const Vector rowsum = wk.rowwise().sum();
  Matrix g = wk * b;
  g -= rowsum.asDiagonal() * a;
  return g / (sigma * sigma);
}

}  // namespace

namespace {

// Streams the kernel block between the rows of a and b one row of a at a
// time, with w_ij = sum_s k_s(a_i, b_j) / sigma_s^2. Nothing of size |a| x |b|
// is stored.
struct KernelBlock {
  double ksum = 0.0;  // sum_s sum_ij k_s(a_i, b_j)
  Matrix wb;          // row i: sum_j w_ij b_j
  Vector rowsum;      // sum_j w_ij
  Matrix wta;         // row j: sum_i w_ij a_i   (when requested)
  Vector colsum;      // sum_i w_ij
};

KernelBlock kernel_block(const Matrix& a, const Matrix& b, const std::vector<double>& sigmas,
                         bool same, bool want_transpose) {
  const Index m = a.rows(), n = b.rows(), d = a.cols();
  const Matrix bt = b.transpose();  // d x n, rows contiguous
  KernelBlock r;
  r.wb.resize(m, d);
  r.rowsum.resize(m);
  Matrix wtat;  // d x n
  if (want_transpose) {
    wtat = Matrix::Zero(d, n);
    r.colsum = Vector::Zero(n);
  }
  Eigen::ArrayXd dist(n), e(n), w(n);
  for (Index i = 0; i < m; ++i) {
    dist.setZero();
    for (Index k = 0; k < d; ++k) dist += (bt.row(k).array().transpose() - a(i, k)).square();
    w.setZero();
    for (double sigma : sigmas) {
      const double inv_s2 = 1.0 / (sigma * sigma);
      e = (dist * (-0.5 * inv_s2)).exp();
      if (same) e(i) = 0.0;
      r.ksum += e.sum();
      w += inv_s2 * e;
    }
    r.wb.row(i) = (bt * w.matrix()).transpose();
    r.rowsum(i) = w.sum();
    if (want_transpose) {
      for (Index k = 0; k < d; ++k) wtat.row(k).array() += a(i, k) * w.transpose();
      r.colsum.array() += w;
    }
  }
  if (want_transpose) r.wta = wtat.transpose();
  return r;
}

}  // namespace

MmdResult mmd2_unbiased(const Matrix& x, const Matrix& y, const std::vector<double>& sigmas,
                        bool want_grad_y) {
  const Index m = x.rows();
  const Index n = y.rows();
  if (m < 2 || n < 2) throw DimensionError("mmd2_unbiased: need at least 2 rows per sample");
  if (x.cols() != y.cols()) throw DimensionError("mmd2_unbiased: column mismatch");
  if (sigmas.empty()) throw ValidationError("mmd2_unbiased: no bandwidth");
  for (double sigma : sigmas)
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("mmd2_unbiased: zero bandwidth");

  const double a = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
  const double b = 1.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  const double c = 2.0 / (static_cast<double>(m) * static_cast<double>(n));

  const KernelBlock kxx = kernel_block(x, x, sigmas, true, false);
  const KernelBlock kxy = kernel_block(x, y, sigmas, false, want_grad_y);
  MmdResult r;
  double vyy = 0.0;
  // d k(p, q) / d p = k(p, q) (q - p) / sigma^2; within-set pairs appear twice
  r.grad_x = 2.0 * a * (kxx.wb - kxx.rowsum.asDiagonal() * x) - c * (kxy.wb - kxy.rowsum.asDiagonal() * x);
  if (want_grad_y) {
    const KernelBlock kyy = kernel_block(y, y, sigmas, true, false);
    vyy = kyy.ksum;
    r.grad_y = 2.0 * b * (kyy.wb - kyy.rowsum.asDiagonal() * y) - c * (kxy.wta - kxy.colsum.asDiagonal() * y);
  } else {
    for (double sigma : sigmas) {
      const double g = -0.5 / (sigma * sigma);
      Matrix k = (pairwise_sq_dists(y, y).array() * g).exp().matrix();
      k.diagonal().setZero();
      vyy += k.sum();
    }
  }
  r.value = a * kxx.ksum + b * vyy - c * kxy.ksum;
  return r;
}

MmdResult mmd2_unbiased(const Matrix& x, const Matrix& y, double sigma, bool want_grad_y) {
  return mmd2_unbiased(x, y, std::vector<double>{sigma}, want_grad_y);
}

namespace {

Matrix double_center(const Matrix& k) {
  const RowVector colmean = k.colwise().mean();
  const Vector rowmean = k.rowwise().mean();
  const double all = k.mean();
  Matrix c = k;
  c.rowwise() -= colmean;
  c.colwise() -= rowmean;
  c.array() += all;
  return c;
}

}  // namespace

HsicResult hsic_biased(const Matrix& u, const Matrix& v, double sigma_u, double sigma_v) {
  const Index m = u.rows();
  if (v.rows() != m) throw DimensionError("hsic_biased: row count mismatch");
  if (m < 4) throw DimensionError("hsic_biased: need at least 4 rows");
  if (!(sigma_u > 0.0) || !(sigma_v > 0.0)) throw ValidationError("hsic_biased: zero bandwidth");
  const Matrix k = (pairwise_sq_dists(u, u).array() * (-0.5 / (sigma_u * sigma_u))).exp().matrix();
  const Matrix l = (pairwise_sq_dists(v, v).array() * (-0.5 / (sigma_v * sigma_v))).exp().matrix();
  const Matrix kc = double_center(k);
  const Matrix lc = double_center(l);
  const double inv = 1.0 / (static_cast<double>(m) * static_cast<double>(m));
  HsicResult r;
  r.value = kc.cwiseProduct(l).sum() * inv;
  // d value / dK = HLH / m^2, symmetric, so each pair contributes twice
  r.grad_u = rbf_grad_left(2.0 * inv * lc.cwiseProduct(k), u, u, sigma_u);
  r.grad_v = rbf_grad_left(2.0 * inv * kc.cwiseProduct(l), v, v, sigma_v);
  return r;
}

// ---------------------------------------------------------------------------

const std::vector<std::size_t>& Discriminator::default_widths() {
  static const std::vector<std::size_t> widths{1024, 521, 512, 256, 128, 64};
  return widths;
}

Discriminator::Discriminator(std::size_t input_dim, std::vector<std::size_t> hidden, Rng& rng)
    : input_dim_(input_dim), hidden_(std::move(hidden)) {
  if (input_dim_ == 0) throw ValidationError("discriminator: zero input width");
  std::size_t fan_in = input_dim_;
  std::vector<std::size_t> outs = hidden_;
  outs.push_back(1);
  for (std::size_t fan_out : outs) {
    if (fan_out == 0) throw ValidationError("discriminator: zero layer width");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(static_cast<Index>(fan_out), static_cast<Index>(fan_in));
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    params_.push_back(std::move(w));
    params_.push_back(Matrix::Zero(1, static_cast<Index>(fan_out)));
    fan_in = fan_out;
  }
}

std::size_t Discriminator::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

Discriminator::Trace Discriminator::forward_trace(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != input_dim_)
    throw DimensionError("discriminator: input width mismatch");
  Trace t;
  Matrix a = x;
  const std::size_t layers = params_.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    const Matrix& w = params_[2 * l];
    const Matrix& b = params_[2 * l + 1];
    Matrix z = a * w.transpose();
    z.rowwise() += b.row(0);
    t.inputs.push_back(std::move(a));
    if (l + 1 < layers) {
      a = z.unaryExpr([](double s) { return s > 0.0 ? s : kLeakySlope * s; });
    }
    t.pre.push_back(std::move(z));
  }
  t.logits = t.pre.back().col(0);
  return t;
}

Vector Discriminator::forward(const Matrix& x) const {
  const Trace t = forward_trace(x);
  return t.logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
}

Matrix Discriminator::backward(const Trace& trace, const Vector& dlogits,
                               std::vector<Matrix>& grads) const {
  const std::size_t layers = params_.size() / 2;
  if (grads.size() != params_.size()) {
    grads.clear();
    for (const auto& p : params_) grads.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  Matrix delta = dlogits;  // rows x 1
  for (std::size_t l = layers; l-- > 0;) {
    grads[2 * l] += delta.transpose() * trace.inputs[l];
    grads[2 * l + 1] += delta.colwise().sum();
    Matrix back = delta * params_[2 * l];
    if (l > 0) {
      const Matrix& z = trace.pre[l - 1];
      back.array() *= z.array().unaryExpr([](double s) { return s > 0.0 ? 1.0 : kLeakySlope; });
    }
    delta = std::move(back);
  }
  return delta;
}

nlohmann::json Discriminator::to_json() const {
  nlohmann::json j;
  j["input_dim"] = input_dim_;
  j["hidden"] = hidden_;
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : params_) {
    ps.push_back({{"rows", p.rows()},
                  {"cols", p.cols()},
                  {"data", std::vector<double>(p.data(), p.data() + p.size())}});
  }
  j["parameters"] = ps;
  return j;
}

Discriminator Discriminator::from_json(const nlohmann::json& j) {
  Discriminator d;
  d.input_dim_ = j.at("input_dim").get<std::size_t>();
  d.hidden_ = j.at("hidden").get<std::vector<std::size_t>>();
  for (const auto& p : j.at("parameters")) {
    const auto rows = p.at("rows").get<Index>();
    const auto cols = p.at("cols").get<Index>();
    const auto data = p.at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != rows * cols)
      throw ParseError("discriminator: parameter size mismatch");
    d.params_.push_back(Eigen::Map<const Matrix>(data.data(), rows, cols));
  }
  if (d.params_.size() != 2 * (d.hidden_.size() + 1))
    throw ParseError("discriminator: layer count mismatch");
  return d;
}

GanResult gan_value_and_grads(const Discriminator& f, const Matrix& u, const Matrix& v,
                              double label_smoothing) {
  if (static_cast<std::size_t>(u.cols()) != f.input_dim() ||
      static_cast<std::size_t>(v.cols()) != f.input_dim())
    throw DimensionError("gan_value_and_grads: input width mismatch");
  if (u.rows() == 0 || v.rows() == 0) throw DimensionError("gan_value_and_grads: empty batch");

  const auto tu = f.forward_trace(u);
  const auto tv = f.forward_trace(v);
  const double mu = 1.0 / static_cast<double>(u.rows());
  const double mv = 1.0 / static_cast<double>(v.rows());
  const double lo = kProbClamp;
  const double hi = 1.0 - kProbClamp;

  GanResult r;
  Vector dval_u(u.rows()), dval_v(v.rows()), ddisc_u(u.rows()), ddisc_v(v.rows());
  const double yu = 1.0 - label_smoothing;
  const double yv = label_smoothing;
  std::size_t correct = 0;
  for (Index i = 0; i < u.rows(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-tu.logits(i)));
    const double pc = std::clamp(p, lo, hi);
    const bool inside = p > lo && p < hi;
    r.value += mu * std::log(pc);
    r.disc_loss -= mu * (yu * std::log(pc) + (1.0 - yu) * std::log(1.0 - pc));
    dval_u(i) = inside ? mu * (1.0 - p) : 0.0;
    ddisc_u(i) = inside ? mu * (p - yu) : 0.0;
    if (p > 0.5) ++correct;
  }
  for (Index i = 0; i < v.rows(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-tv.logits(i)));
    const double pc = std::clamp(p, lo, hi);
    const bool inside = p > lo && p < hi;
    r.value += mv * std::log(1.0 - pc);
    r.disc_loss -= mv * (yv * std::log(pc) + (1.0 - yv) * std::log(1.0 - pc));
    dval_v(i) = inside ? -mv * p : 0.0;
    ddisc_v(i) = inside ? mv * (p - yv) : 0.0;
    if (p < 0.5) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(u.rows() + v.rows());

  std::vector<Matrix> scratch;
  r.grad_u = f.backward(tu, dval_u, scratch);
  scratch.clear();
  r.grad_v = f.backward(tv, dval_v, scratch);
  f.backward(tu, ddisc_u, r.grad_params);
  f.backward(tv, ddisc_v, r.grad_params);
  return r;
}

}  // namespace usca
