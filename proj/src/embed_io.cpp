#include "usca/embed_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "usca/error.hpp"
#include "usca/log.hpp"

namespace usca {

namespace fs = std::filesystem;

std::optional<std::size_t> EmbeddingTable::find(const std::string& token) const {
  if (index_.size() != tokens.size()) {
    index_.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) index_.emplace(tokens[i], i);
  }
  const auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingTable::validate() const {
  if (tokens.size() != static_cast<std::size_t>(vectors.rows()))
    throw ValidationError("embedding table: token count does not match rows");
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& t : tokens)
    if (!seen.emplace(t, 0).second) throw ValidationError("embedding table: duplicate token '" + t + "'");
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ", line " + std::to_string(line);
}

double parse_double(std::string_view s, const fs::path& path, std::size_t line) {
  double v = 0;
  // from_chars does not accept a leading '+'
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError(where(path, line) + ": not a number: '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::vector<std::string_view> lines_of(const std::string& text) {
  std::vector<std::string_view> out;
  std::string_view all(text);
  std::size_t pos = 0;
  while (pos < all.size()) {
    std::size_t nl = all.find('\n', pos);
    if (nl == std::string_view::npos) nl = all.size();
    out.push_back(all.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

bool blank(std::string_view s) { return split_ws(s).empty(); }

}  // namespace

EmbeddingTable read_vec_text(const fs::path& path, std::size_t max_rows) {
  const std::string text = read_text_file(path);
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError(path.string() + ": empty file");
  const auto header = split_ws(lines[0]);
  std::size_t n = 0, d = 0;
  auto parse_count = [&](std::string_view s, std::size_t& out) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
  };
  if (header.size() != 2 || !parse_count(header[0], n) || !parse_count(header[1], d) || d == 0)
    throw ParseError(where(path, 1) + ": malformed header, expected \"N d\"");
  const std::size_t want = max_rows == 0 ? n : std::min(n, max_rows);

  EmbeddingTable t;
  t.source = path.string();
  t.vectors.resize(static_cast<Index>(want), static_cast<Index>(d));
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t row = 0;
  for (std::size_t ln = 1; ln < lines.size() && row < want; ++ln) {
    if (blank(lines[ln])) continue;
    const auto fields = split_ws(lines[ln]);
    if (fields.size() != d + 1)
      throw ParseError(where(path, ln + 1) + ": expected " + std::to_string(d) + " values, got " +
                       std::to_string(fields.size() - 1));
    std::string token(fields[0]);
    if (seen.count(token)) {
      log::warn(where(path, ln + 1) + ": duplicate token '" + token + "' ignored");
      continue;
    }
    for (std::size_t k = 0; k < d; ++k)
      t.vectors(static_cast<Index>(row), static_cast<Index>(k)) = parse_double(fields[k + 1], path, ln + 1);
    seen.emplace(token, row);
    t.tokens.push_back(std::move(token));
    ++row;
  }
  if (row < want && max_rows == 0 && seen.size() + 0 < n) {
    // fewer rows than the header promised (duplicates also land here)
    log::warn(path.string() + ": header announced " + std::to_string(n) + " rows, read " +
              std::to_string(row));
  }
  t.vectors.conservativeResize(static_cast<Index>(row), static_cast<Index>(d));
  require_finite(t.vectors, path.string());
  return t;
}

void write_vec_text(const fs::path& path, const EmbeddingTable& table) {
  table.validate();
  std::string out = std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    out += table.tokens[i];
    for (Index k = 0; k < table.vectors.cols(); ++k) {
      out += ' ';
      out += format_double(table.vectors(static_cast<Index>(i), k));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

Matrix read_matrix_csv(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::vector<std::vector<double>> rows;
  std::size_t ln = 0;
  for (std::string_view line : lines_of(text)) {
    ++ln;
    if (blank(line)) continue;
    std::vector<double> vals;
    std::size_t pos = 0;
    while (true) {
      std::size_t comma = line.find(',', pos);
      std::string_view cell = line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos);
      const auto parts = split_ws(cell);
      if (parts.size() != 1) throw ParseError(where(path, ln) + ": empty or malformed cell");
      vals.push_back(parse_double(parts[0], path, ln));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && vals.size() != rows.front().size())
      throw ParseError(where(path, ln) + ": row " + std::to_string(rows.size() + 1) + " has " +
                       std::to_string(vals.size()) + " columns, expected " +
                       std::to_string(rows.front().size()));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

void write_matrix_csv(const fs::path& path, const Matrix& m, const std::vector<std::string>& header) {
  if (!header.empty() && header.size() != static_cast<std::size_t>(m.cols()))
    throw DimensionError("write_matrix_csv: header length does not match columns");
  std::string out;
  for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
  if (!header.empty()) out += '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<int> read_labels(const fs::path& path, std::size_t num_classes) {
  const std::string text = read_text_file(path);
  std::vector<int> out;
  std::size_t ln = 0;
  for (std::string_view line : lines_of(text)) {
    ++ln;
    const auto parts = split_ws(line);
    if (parts.empty()) continue;
    int v = 0;
    const auto res = std::from_chars(parts[0].data(), parts[0].data() + parts[0].size(), v);
    if (parts.size() != 1 || res.ec != std::errc() || res.ptr != parts[0].data() + parts[0].size())
      throw ParseError(where(path, ln) + ": expected one integer label");
    if (v < 0 || (num_classes > 0 && static_cast<std::size_t>(v) >= num_classes))
      throw ValidationError(where(path, ln) + ": label " + std::to_string(v) + " out of range");
    out.push_back(v);
  }
  if (out.empty()) throw ParseError(path.string() + ": no labels");
  return out;
}

void write_labels(const fs::path& path, const std::vector<int>& labels) {
  std::string out;
  for (int y : labels) out += std::to_string(y) + "\n";
  write_text_file(path, out);
}

Dictionary read_dictionary(const fs::path& path, const EmbeddingTable* queries,
                           const EmbeddingTable* references, std::size_t* skipped) {
  if ((queries == nullptr) != (references == nullptr))
    throw ValidationError("read_dictionary: give both tables or neither");
  const std::string text = read_text_file(path);
  Dictionary out;
  std::size_t miss = 0, ln = 0;
  for (std::string_view line : lines_of(text)) {
    ++ln;
    const auto parts = split_ws(line);
    if (parts.empty()) continue;
    if (parts.size() != 2) throw ParseError(where(path, ln) + ": expected two columns");
    if (queries) {
      const auto a = queries->find(std::string(parts[0]));
      const auto b = references->find(std::string(parts[1]));
      if (!a || !b) {
        ++miss;
        continue;
      }
      out.emplace_back(*a, *b);
    } else {
      std::size_t a = 0, b = 0;
      const auto ra = std::from_chars(parts[0].data(), parts[0].data() + parts[0].size(), a);
      const auto rb = std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), b);
      if (ra.ec != std::errc() || rb.ec != std::errc() || ra.ptr != parts[0].data() + parts[0].size() ||
          rb.ptr != parts[1].data() + parts[1].size())
        throw ParseError(where(path, ln) + ": expected two row indices");
      out.emplace_back(a, b);
    }
  }
  if (miss > 0) log::warn(path.string() + ": " + std::to_string(miss) + " pairs with unknown tokens skipped");
  if (skipped) *skipped = miss;
  return out;
}

void write_dictionary(const fs::path& path, const Dictionary& dict) {
  std::string out;
  for (const auto& [a, b] : dict) out += std::to_string(a) + " " + std::to_string(b) + "\n";
  write_text_file(path, out);
}

namespace {

fs::path with_ext(fs::path stem, const char* ext) { return stem += ext; }

}  // namespace

void write_matrix_bin(const fs::path& stem, const Matrix& m, const nlohmann::json& meta) {
  const nlohmann::json header{{"format", "usca-matrix-v1"},
                              {"rows", m.rows()},
                              {"cols", m.cols()},
                              {"dtype", "float64-le"},
                              {"order", "row-major"},
                              {"meta", meta}};
  write_text_file(with_ext(stem, ".json"), header.dump(2) + "\n");
  std::ofstream out(with_ext(stem, ".bin"), std::ios::binary);
  if (!out) throw IoError("cannot write " + with_ext(stem, ".bin").string());
  const std::size_t count = static_cast<std::size_t>(m.size());
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const auto bits = __builtin_bswap64(std::bit_cast<std::uint64_t>(m.data()[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw IoError("write failed: " + with_ext(stem, ".bin").string());
}

Matrix read_matrix_bin(const fs::path& stem, nlohmann::json* meta) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_text_file(with_ext(stem, ".json")));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(with_ext(stem, ".json").string() + ": " + e.what());
  }
  if (header.value("format", "") != "usca-matrix-v1" || header.value("dtype", "") != "float64-le")
    throw ParseError(with_ext(stem, ".json").string() + ": unsupported matrix header");
  const auto rows = header.at("rows").get<Index>();
  const auto cols = header.at("cols").get<Index>();
  if (rows < 0 || cols < 0) throw ParseError(with_ext(stem, ".json").string() + ": negative shape");
  const std::string bytes = read_text_file(with_ext(stem, ".bin"));
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  if (bytes.size() != count * sizeof(double))
    throw ParseError(with_ext(stem, ".bin").string() + ": expected " + std::to_string(count * 8) +
                     " bytes, found " + std::to_string(bytes.size()));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes.data() + i * 8, 8);
    if constexpr (std::endian::native != std::endian::little) bits = __builtin_bswap64(bits);
    m.data()[i] = std::bit_cast<double>(bits);
  }
  if (meta) *meta = header.value("meta", nlohmann::json::object());
  return m;
}

}  // namespace usca
