#include "usca/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "usca/baselines.hpp"
#include "usca/embed_io.hpp"
#include "usca/error.hpp"
#include "usca/store.hpp"

namespace usca {

namespace fs = std::filesystem;

namespace {

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError(where + ": unknown key '" + key + "'");
}

const std::vector<std::string> kUpperBounds{"leakage", "theta_rel_diff", "pair_match_error",
                                            "whitening_residual"};
const std::vector<std::string> kLowerBounds{"private_corr", "ica_corr"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"version", "data", "solver", "eval", "output"}, "config");
  if (!j.contains("version")) throw ValidationError("config: missing 'version'");
  ExperimentConfig c;
  c.version = j.at("version").get<int>();
  if (c.version != kExperimentConfigVersion)
    throw ValidationError("config: unsupported version " + std::to_string(c.version));

  const nlohmann::json data = j.value("data", nlohmann::json::object());
  reject_unknown(data, {"preset", "latent", "mixing", "homogeneous", "n", "seed", "holdout_fraction", "anchors"},
                 "config.data");
  c.data.preset = data.value("preset", c.data.preset);
  if (data.contains("latent")) {
    reject_unknown(data["latent"], {"shared", "private1", "private2"}, "config.data.latent");
    c.data.latent = LatentSpec::from_json(data["latent"]);
  }
  if (data.contains("mixing")) {
    reject_unknown(data["mixing"], {"d1", "d2", "homogeneous"}, "config.data.mixing");
    c.data.mixing = MixingTemplate::from_json(data["mixing"]);
  }
  c.data.homogeneous = data.value("homogeneous", c.data.homogeneous);
  c.data.n = data.value("n", c.data.n);
  c.data.seed = data.value("seed", c.data.seed);
  c.data.holdout_fraction = data.value("holdout_fraction", c.data.holdout_fraction);
  c.data.anchors = data.value("anchors", c.data.anchors);
  if (c.data.n < 2) throw ValidationError("config.data: n must be >= 2");
  if (!(c.data.holdout_fraction >= 0.0 && c.data.holdout_fraction < 1.0))
    throw ValidationError("config.data: holdout_fraction must lie in [0, 1)");

  const LatentSpec latent = c.latent_spec();
  nlohmann::json solver = j.value("solver", nlohmann::json::object());
  if (!solver.is_object()) throw ValidationError("config.solver: expected an object");
  if (!solver.contains("d_shared")) solver["d_shared"] = latent.d_shared();
  if (!solver.contains("d_private1")) solver["d_private1"] = latent.private1.size();
  if (!solver.contains("d_private2")) solver["d_private2"] = latent.private2.size();
  if (!solver.contains("seed")) solver["seed"] = c.data.seed;
  c.solver = SolverConfig::from_json(solver);

  const nlohmann::json eval = j.value("eval", nlohmann::json::object());
  reject_unknown(eval, {"thresholds", "ica"}, "config.eval");
  c.eval.ica = eval.value("ica", false);
  if (eval.contains("thresholds")) {
    for (const auto& [key, value] : eval["thresholds"].items()) {
      if (!contains(kUpperBounds, key) && !contains(kLowerBounds, key))
        throw ValidationError("config.eval.thresholds: unknown metric '" + key + "'");
      c.eval.thresholds[key] = value.get<double>();
    }
  }
  c.output = j.value("output", c.output);
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json data{{"preset", this->data.preset},
                      {"homogeneous", this->data.homogeneous},
                      {"n", this->data.n},
                      {"seed", this->data.seed},
                      {"holdout_fraction", this->data.holdout_fraction},
                      {"anchors", this->data.anchors},
                      {"mixing", this->data.mixing.to_json()}};
  if (this->data.latent) data["latent"] = this->data.latent->to_json();
  nlohmann::json thresholds = nlohmann::json::object();
  for (const auto& [k, v] : eval.thresholds) thresholds[k] = v;
  return {{"version", version},
          {"data", data},
          {"solver", solver.to_json()},
          {"eval", {{"thresholds", thresholds}, {"ica", eval.ica}}},
          {"output", output}};
}

LatentSpec ExperimentConfig::latent_spec() const {
  if (data.latent) return *data.latent;
  return preset(data.preset, data.seed).latent;
}

nlohmann::json run_gen(const ExperimentConfig& cfg, const fs::path& dir) {
  Preset p;
  if (cfg.data.latent) {
    p.name = "custom";
    p.latent = *cfg.data.latent;
    p.mixing = cfg.data.mixing;
  } else {
    p = preset(cfg.data.preset, cfg.data.seed);
  }
  if (cfg.data.homogeneous) p.mixing.homogeneous = true;
  const SyntheticDataset ds = generate_from_preset(p, cfg.data.n, cfg.data.seed, cfg.data.holdout_fraction);
  const DatasetInfo info{cfg.data.latent ? std::string() : p.name, p.latent, cfg.data.seed, cfg.data.n,
                         cfg.data.holdout_fraction};
  nlohmann::json manifest = save_dataset(dir, ds, info);
  write_text_file(dir / "config.json", cfg.to_json().dump(2) + "\n");
  return manifest;
}

AnchorSet draw_anchors(const SyntheticDataset& ds, std::size_t n, std::uint64_t seed) {
  const auto rows = static_cast<std::size_t>(ds.x1.rows());
  if (n > rows) throw ValidationError("anchors: more anchors than rows");
  Rng rng = Rng(seed).substream("anchors");
  const auto perm = rng.permutation(rows);
  AnchorSet a;
  for (std::size_t i = 0; i < n; ++i) a.pairs.push_back({perm[i], ds.alignment[perm[i]]});
  return a;
}

FitResult fit_dataset(const SyntheticDataset& ds, const SolverConfig& solver, const AnchorSet& anchors) {
  if (solver.mode == Mode::WithPrivate) return fit_with_private(ds.x1, ds.x2, solver);
  return fit(ds.x1, ds.x2, solver, anchors);
}

FitResult run_fit(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& model_dir) {
  const SyntheticDataset ds = load_dataset(data_dir);
  const AnchorSet anchors = draw_anchors(ds, cfg.data.anchors, cfg.data.seed);
  FitResult r = fit_dataset(ds, cfg.solver, anchors);
  save_model(model_dir, r, cfg.to_json());
  return r;
}

namespace {

// Best |corr| per column of `truth` under a one-to-one assignment.
std::vector<double> assigned_abs_corr(const Matrix& est, const Matrix& truth) {
  Matrix cost(truth.cols(), est.cols());
  for (Index i = 0; i < truth.cols(); ++i)
    for (Index j = 0; j < est.cols(); ++j) cost(i, j) = -abs_pearson(truth.col(i), est.col(j));
  std::vector<double> out(static_cast<std::size_t>(truth.cols()), 0.0);
  for (auto [i, j] : min_cost_assignment(cost))
    out[i] = -cost(static_cast<Index>(i), static_cast<Index>(j));
  return out;
}

std::string describe(const std::string& metric, double value, const char* op, double bound) {
  std::ostringstream os;
  os << metric << " = " << value << ", required " << op << ' ' << bound;
  return os.str();
}

}  // namespace

EvalOutcome run_eval(const FitResult& model, const SyntheticDataset& ds, const EvalSection& eval,
                     std::uint64_t seed) {
  if (ds.test.empty()) throw ValidationError("eval: dataset has no aligned test split");
  const std::size_t dc = static_cast<std::size_t>(model.q1->q.rows());
  EvalOutcome out;
  IdentReport& r = out.report;
  r.leakage1 = leakage(model.q1->q, ds.mixing.a1, dc);
  r.leakage2 = leakage(model.q2->q, ds.mixing.a2, dc);
  r.theta_rel_diff = theta_consistency(model.q1->q, ds.mixing.a1, model.q2->q, ds.mixing.a2, dc);
  r.pair_match_error = pair_match_error(model.q1->q, ds.test.x1, model.q2->q, ds.test.x2);
  r.whitening_residual1 = whitening_residual(model.q1->q, model.q1->covariance);
  r.whitening_residual2 = whitening_residual(model.q2->q, model.q2->covariance);
  if (model.qp1 && model.qp2) {
    auto worst = [](const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); };
    r.private_corr1 = worst(assigned_abs_corr(model.qp1->apply(ds.test.x1), ds.test.p1));
    r.private_corr2 = worst(assigned_abs_corr(model.qp2->apply(ds.test.x2), ds.test.p2));
  }
  if (eval.ica) {
    Rng rng = Rng(seed).substream("eval/ica");
    const IcaResult ica = fastica(model.q1->apply(ds.x1), dc, rng);
    r.ica_corr = assigned_abs_corr(ica.sources, ds.c);
  }
  r.validate();

  for (const auto& [metric, bound] : eval.thresholds) {
    auto upper = [&](const std::string& name, double v) {
      if (!(v <= bound)) out.failures.push_back(describe(name, v, "<=", bound));
    };
    auto lower = [&](const std::string& name, double v) {
      if (!(v >= bound)) out.failures.push_back(describe(name, v, ">=", bound));
    };
    if (metric == "leakage") {
      upper("leakage1", r.leakage1);
      upper("leakage2", r.leakage2);
    } else if (metric == "theta_rel_diff") {
      upper(metric, r.theta_rel_diff);
    } else if (metric == "pair_match_error") {
      upper(metric, r.pair_match_error);
    } else if (metric == "whitening_residual") {
      upper("whitening_residual1", r.whitening_residual1);
      upper("whitening_residual2", r.whitening_residual2);
    } else if (metric == "private_corr") {
      if (!r.private_corr1) {
        out.failures.push_back("private_corr: model has no private projections");
      } else {
        lower("private_corr1", *r.private_corr1);
        lower("private_corr2", *r.private_corr2);
      }
    } else if (metric == "ica_corr") {
      if (r.ica_corr.empty()) {
        out.failures.push_back("ica_corr: eval.ica is off");
      } else {
        for (std::size_t i = 0; i < r.ica_corr.size(); ++i)
          lower("ica_corr[" + std::to_string(i) + "]", r.ica_corr[i]);
      }
    }
  }
  return out;
}

void write_scatter(const FitResult& model, const SyntheticDataset& ds, const fs::path& csv) {
  if (ds.test.empty()) throw ValidationError("scatter: dataset has no aligned test split");
  const Matrix h1 = model.q1->apply(ds.test.x1);
  const Matrix h2 = model.q2->apply(ds.test.x2);
  const Index kc = ds.test.c.cols(), k = h1.cols();
  Matrix all(h1.rows(), kc + 2 * k);
  all << ds.test.c, h1, h2;
  std::vector<std::string> header;
  for (Index i = 0; i < kc; ++i) header.push_back("c" + std::to_string(i + 1));
  for (Index i = 0; i < k; ++i) header.push_back("chat1_" + std::to_string(i + 1));
  for (Index i = 0; i < k; ++i) header.push_back("chat2_" + std::to_string(i + 1));
  write_matrix_csv(csv, all, header);
}

std::vector<RetrievalRow> run_retrieval(const FitResult& model, const Matrix& queries,
                                        const Matrix& references, const Dictionary& dict,
                                        const std::vector<std::size_t>& ks) {
  Matrix q = queries, r = references;
  center_columns(q);
  center_columns(r);
  const Matrix eq = model.q1->apply(q);
  const Matrix er = model.q2->apply(r);
  std::vector<RetrievalRow> out;
  for (std::size_t k : ks)
    out.push_back({k, retrieval_precision(eq, er, dict, k, Scorer::NN),
                   retrieval_precision(eq, er, dict, k, Scorer::CSLS)});
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median: empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace usca
