#pragma once

// Experiment configuration and the gen / fit / eval / scatter / retrieve
// pipeline steps behind the command-line driver.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "usca/datagen.hpp"
#include "usca/eval.hpp"
#include "usca/solver.hpp"

namespace usca {

inline constexpr int kExperimentConfigVersion = 1;

struct DataSection {
  std::string preset = "thm1a";       // ignored when latent is given
  std::optional<LatentSpec> latent;   // explicit latent spec
  MixingTemplate mixing;              // used with an explicit latent spec
  bool homogeneous = false;           // force A1 = A2 for presets
  std::size_t n = 20000;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.05;
  std::size_t anchors = 0;            // aligned pairs handed to the solver
};

/// Upper bounds (leakage, theta_rel_diff, pair_match_error,
/// whitening_residual) and lower bounds (private_corr) checked by eval.
struct EvalSection {
  std::map<std::string, double> thresholds;
  bool ica = false;  // run FastICA on the recovered shared components
};

struct ExperimentConfig {
  int version = kExperimentConfigVersion;
  DataSection data;
  SolverConfig solver;
  EvalSection eval;
  std::string output = "out";

  /// Rejects unknown keys in every section and a missing or unsupported
  /// version. Missing solver d_shared / d_private1 / d_private2 are taken
  /// from the latent spec and a missing solver seed from data.seed.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Complete effective configuration; from_json(to_json()) reproduces it.
  nlohmann::json to_json() const;

  /// Latent spec of the configured data (preset or explicit).
  LatentSpec latent_spec() const;
};

/// Generates the configured dataset into `dir`; returns the manifest.
nlohmann::json run_gen(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Fits on the dataset in `data_dir` and writes the model to `model_dir`,
/// with the full config echoed into config.json.
FitResult run_fit(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                  const std::filesystem::path& model_dir);

struct EvalOutcome {
  IdentReport report;
  std::vector<std::string> failures;  // "metric value vs bound" per violated threshold
  bool passed() const { return failures.empty(); }
};

/// Identifiability report of a fitted model on its dataset.
EvalOutcome run_eval(const FitResult& model, const SyntheticDataset& ds, const EvalSection& eval,
                     std::uint64_t seed);

/// Rows of the aligned test split: true c, then Q1 x1, then Q2 x2.
void write_scatter(const FitResult& model, const SyntheticDataset& ds,
                   const std::filesystem::path& csv);

struct RetrievalRow {
  std::size_t k;
  double nn;
  double csls;
};

/// P@k for k in ks with both scorers after projecting the centered
/// embeddings through the model.
std::vector<RetrievalRow> run_retrieval(const FitResult& model, const Matrix& queries,
                                        const Matrix& references, const Dictionary& dict,
                                        const std::vector<std::size_t>& ks = {1, 5, 10});

/// `n` anchor pairs (row of view 1, aligned row of view 2) drawn from `seed`.
AnchorSet draw_anchors(const SyntheticDataset& ds, std::size_t n, std::uint64_t seed);

/// Dispatches on the solver mode.
FitResult fit_dataset(const SyntheticDataset& ds, const SolverConfig& solver, const AnchorSet& anchors);

/// Median of a non-empty list.
double median(std::vector<double> v);

}  // namespace usca
