#pragma once

// On-disk layout of datasets and fitted models.
//
// Dataset directory: manifest.json plus binary matrices x1, x2, c, p1, p2,
// a1, a2, mean1, mean2, alignment and the aligned test split test_x1,
// test_x2, test_c, test_p1, test_p2 (each <name>.bin + <name>.json).
//
// Model directory: model.json, config.json, q1 (and q2 unless homogeneous),
// optional qp1/qp2, classifier and discriminator, trace.csv, checkpoints.csv.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "usca/datagen.hpp"
#include "usca/solver.hpp"

namespace usca {

struct DatasetInfo {
  std::string preset;          // empty for explicit specs
  LatentSpec latent;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  double holdout_fraction = 0;
};

/// Writes the dataset; `csv` also exports every matrix as CSV. Returns the
/// manifest, whose "content_hash" covers every binary file.
nlohmann::json save_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds,
                            const DatasetInfo& info, bool csv = false);
SyntheticDataset load_dataset(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);

/// `echo` is stored verbatim in config.json.
void save_model(const std::filesystem::path& dir, const FitResult& fit,
                const nlohmann::json& echo = nlohmann::json::object());
FitResult load_model(const std::filesystem::path& dir, nlohmann::json* echo = nullptr);

/// FNV-1a 64 of a byte string, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace usca
