#include "usca/store.hpp"

#include <fstream>
#include <sstream>

#include "usca/embed_io.hpp"
#include "usca/error.hpp"

namespace usca {

namespace fs = std::filesystem;

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

const char* const kDatasetFormat = "usca-dataset-v1";
const char* const kModelFormat = "usca-model-v1";

Matrix row_matrix(const RowVector& v) { return Matrix(v); }

Matrix index_matrix(const std::vector<std::size_t>& idx) {
  Matrix m(static_cast<Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) m(static_cast<Index>(i), 0) = static_cast<double>(idx[i]);
  return m;
}

// Numeric CSV after a one-line header.
std::vector<std::vector<double>> read_table(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    try {
      while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": malformed row '" + line + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

nlohmann::json save_dataset(const fs::path& dir, const SyntheticDataset& ds, const DatasetInfo& info,
                            bool csv) {
  make_dir(dir);
  const std::vector<std::pair<std::string, Matrix>> mats{
      {"x1", ds.x1},
      {"x2", ds.x2},
      {"c", ds.c},
      {"p1", ds.p1},
      {"p2", ds.p2},
      {"a1", ds.mixing.a1},
      {"a2", ds.mixing.a2},
      {"mean1", row_matrix(ds.mean1)},
      {"mean2", row_matrix(ds.mean2)},
      {"alignment", index_matrix(ds.alignment)},
      {"test_x1", ds.test.x1},
      {"test_x2", ds.test.x2},
      {"test_c", ds.test.c},
      {"test_p1", ds.test.p1},
      {"test_p2", ds.test.p2}};
  std::string all_bytes;
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, m] : mats) {
    write_matrix_bin(dir / name, m, {{"role", name}, {"seed", info.seed}});
    const std::string bytes = read_text_file(fs::path(dir / name) += ".bin");
    files[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"hash", fnv1a_hex(bytes)}};
    all_bytes += bytes;
    if (csv) write_matrix_csv(fs::path(dir / name) += ".csv", m);
  }
  nlohmann::json manifest{{"format", kDatasetFormat},
                          {"preset", info.preset},
                          {"latent", info.latent.to_json()},
                          {"seed", info.seed},
                          {"n", info.n},
                          {"holdout_fraction", info.holdout_fraction},
                          {"d_shared", ds.mixing.d_shared},
                          {"homogeneous", ds.mixing.homogeneous},
                          {"files", files},
                          {"content_hash", fnv1a_hex(all_bytes)}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

SyntheticDataset load_dataset(const fs::path& dir, nlohmann::json* manifest) {
  require_dir(dir);
  const nlohmann::json m = read_json(dir / "manifest.json");
  if (m.value("format", "") != kDatasetFormat)
    throw ParseError((dir / "manifest.json").string() + ": not a dataset manifest");
  SyntheticDataset ds;
  ds.x1 = read_matrix_bin(dir / "x1");
  ds.x2 = read_matrix_bin(dir / "x2");
  ds.c = read_matrix_bin(dir / "c");
  ds.p1 = read_matrix_bin(dir / "p1");
  ds.p2 = read_matrix_bin(dir / "p2");
  ds.mixing.a1 = read_matrix_bin(dir / "a1");
  ds.mixing.a2 = read_matrix_bin(dir / "a2");
  ds.mixing.d_shared = m.at("d_shared");
  ds.mixing.homogeneous = m.at("homogeneous");
  ds.mean1 = read_matrix_bin(dir / "mean1").row(0);
  ds.mean2 = read_matrix_bin(dir / "mean2").row(0);
  const Matrix align = read_matrix_bin(dir / "alignment");
  for (Index i = 0; i < align.rows(); ++i) ds.alignment.push_back(static_cast<std::size_t>(align(i, 0)));
  ds.test.x1 = read_matrix_bin(dir / "test_x1");
  ds.test.x2 = read_matrix_bin(dir / "test_x2");
  ds.test.c = read_matrix_bin(dir / "test_c");
  ds.test.p1 = read_matrix_bin(dir / "test_p1");
  ds.test.p2 = read_matrix_bin(dir / "test_p2");
  if (ds.x1.rows() != ds.x2.rows() || ds.alignment.size() != static_cast<std::size_t>(ds.x1.rows()))
    throw ParseError(dir.string() + ": inconsistent dataset shapes");
  if (manifest) *manifest = m;
  return ds;
}

void save_model(const fs::path& dir, const FitResult& fit, const nlohmann::json& echo) {
  make_dir(dir);
  const bool homog = fit.homogeneous();
  nlohmann::json meta{{"format", kModelFormat},
                      {"homogeneous", homog},
                      {"d_shared", fit.q1->q.rows()},
                      {"bandwidths", fit.bandwidths},
                      {"chosen_start", fit.chosen_start},
                      {"has_private", static_cast<bool>(fit.qp1)},
                      {"has_classifier", fit.classifier.has_value()},
                      {"has_discriminator", fit.discriminator.has_value()},
                      {"solver", fit.config.to_json()}};
  write_matrix_bin(dir / "q1", fit.q1->q, {{"role", "q1"}});
  write_matrix_bin(dir / "sigma1", fit.q1->covariance, {{"role", "sigma1"}});
  if (!homog) write_matrix_bin(dir / "q2", fit.q2->q, {{"role", "q2"}});
  write_matrix_bin(dir / "sigma2", fit.q2->covariance, {{"role", "sigma2"}});
  if (fit.qp1) {
    write_matrix_bin(dir / "qp1", fit.qp1->q, {{"role", "qp1"}});
    write_matrix_bin(dir / "qp2", fit.qp2->q, {{"role", "qp2"}});
  }
  if (fit.classifier) {
    write_matrix_bin(dir / "classifier_w", fit.classifier->w, {{"role", "classifier_w"}});
    write_matrix_bin(dir / "classifier_b", fit.classifier->b, {{"role", "classifier_b"}});
  }
  if (fit.discriminator)
    write_text_file(dir / "discriminator.json", fit.discriminator->to_json().dump() + "\n");
  write_text_file(dir / "model.json", meta.dump(2) + "\n");
  write_text_file(dir / "config.json", echo.dump(2) + "\n");

  std::string trace = "epoch,matcher,rq1,rq2,anchor,hsic,total\n";
  for (const auto& r : fit.trace)
    trace += std::to_string(r.epoch) + "," + format_double(r.matcher) + "," + format_double(r.rq1) +
             "," + format_double(r.rq2) + "," + format_double(r.anchor) + "," + format_double(r.hsic) +
             "," + format_double(r.total) + "\n";
  write_text_file(dir / "trace.csv", trace);
  std::string cps = "epoch,matcher,total\n";
  for (const auto& c : fit.checkpoints)
    cps += std::to_string(c.epoch) + "," + format_double(c.matcher) + "," + format_double(c.total) + "\n";
  write_text_file(dir / "checkpoints.csv", cps);
}

FitResult load_model(const fs::path& dir, nlohmann::json* echo) {
  require_dir(dir);
  const nlohmann::json meta = read_json(dir / "model.json");
  if (meta.value("format", "") != kModelFormat)
    throw ParseError((dir / "model.json").string() + ": not a model directory");
  FitResult fit;
  fit.config = SolverConfig::from_json(meta.at("solver"));
  fit.bandwidths = meta.at("bandwidths").get<std::vector<double>>();
  fit.chosen_start = meta.at("chosen_start");
  auto proj = [&](const char* q, const char* s) {
    return std::make_shared<const Projection>(Projection{read_matrix_bin(dir / q), read_matrix_bin(dir / s)});
  };
  fit.q1 = proj("q1", "sigma1");
  if (meta.at("homogeneous").get<bool>()) {
    fit.q2 = fit.q1;
  } else {
    fit.q2 = proj("q2", "sigma2");
  }
  if (meta.at("has_private").get<bool>()) {
    fit.qp1 = proj("qp1", "sigma1");
    fit.qp2 = proj("qp2", "sigma2");
  }
  if (meta.at("has_classifier").get<bool>())
    fit.classifier = LinearClassifier{read_matrix_bin(dir / "classifier_w"), read_matrix_bin(dir / "classifier_b")};
  if (meta.at("has_discriminator").get<bool>())
    fit.discriminator = Discriminator::from_json(read_json(dir / "discriminator.json"));
  for (const auto& r : read_table(dir / "trace.csv")) {
    if (r.size() != 7) throw ParseError((dir / "trace.csv").string() + ": expected 7 columns");
    fit.trace.push_back({static_cast<std::size_t>(r[0]), r[1], r[2], r[3], r[4], r[5], r[6]});
  }
  for (const auto& r : read_table(dir / "checkpoints.csv")) {
    if (r.size() != 3) throw ParseError((dir / "checkpoints.csv").string() + ": expected 3 columns");
    fit.checkpoints.push_back({static_cast<std::size_t>(r[0]), r[1], r[2]});
  }
  if (echo) *echo = read_json(dir / "config.json");
  return fit;
}

}  // namespace usca
