#pragma once

// Readers and writers for embedding tables, CSV matrices, label files,
// dictionaries and the binary matrix format shared by datasets and models.

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "usca/eval.hpp"
#include "usca/numerics.hpp"

namespace usca {

struct EmbeddingTable {
  std::vector<std::string> tokens;
  Matrix vectors;  // one row per token
  std::string source;

  std::size_t size() const noexcept { return tokens.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  /// Row of `token`, if present.
  std::optional<std::size_t> find(const std::string& token) const;
  /// Token count matches rows, tokens unique.
  void validate() const;

 private:
  mutable std::unordered_map<std::string, std::size_t> index_;
};

/// Word-vector text: header "N d", then "token v1 ... vd" per line. Reads at
/// most max_rows rows (0 = all). A duplicate token keeps its first row and
/// logs a warning.
EmbeddingTable read_vec_text(const std::filesystem::path& path, std::size_t max_rows = 0);
void write_vec_text(const std::filesystem::path& path, const EmbeddingTable& table);

/// Rectangular numeric CSV without header.
Matrix read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& header = {});

/// One integer per line, 0-based. With num_classes > 0 every label must be
/// below it.
std::vector<int> read_labels(const std::filesystem::path& path, std::size_t num_classes = 0);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);

/// Two whitespace-separated columns per line. Entries are looked up as tokens
/// in the tables when given, otherwise parsed as row indices. Pairs with an
/// unknown token are skipped and counted in `skipped`.
Dictionary read_dictionary(const std::filesystem::path& path, const EmbeddingTable* queries = nullptr,
                           const EmbeddingTable* references = nullptr, std::size_t* skipped = nullptr);
void write_dictionary(const std::filesystem::path& path, const Dictionary& dict);

/// Binary matrix: <stem>.bin holds rows*cols little-endian float64 values in
/// row-major order; <stem>.json holds {"format", "rows", "cols", "dtype",
/// "meta"}. `stem` is a path without extension.
void write_matrix_bin(const std::filesystem::path& stem, const Matrix& m,
                      const nlohmann::json& meta = nlohmann::json::object());
Matrix read_matrix_bin(const std::filesystem::path& stem, nlohmann::json* meta = nullptr);

/// Whole-file helpers.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Formats with 17 significant digits so that text round trips are exact.
std::string format_double(double v);

}  // namespace usca
