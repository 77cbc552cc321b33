#include "doctest.h"

#include <fstream>

#include "helpers.hpp"
#include "usca/datagen.hpp"
#include "usca/embed_io.hpp"
#include "usca/error.hpp"
#include "usca/store.hpp"

using namespace usca;
namespace fs = std::filesystem;

namespace {

fs::path write(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("vec text: minimal file, max_rows, malformed lines") {
  const fs::path dir = test::temp_dir("vec");
  const fs::path p = write(dir, "a.vec", "2 3\na 1 2 3\nb 4 5 6\n");
  const EmbeddingTable t = read_vec_text(p);
  CHECK(t.tokens == std::vector<std::string>{"a", "b"});
  Matrix expect(2, 3);
  expect << 1, 2, 3, 4, 5, 6;
  CHECK(t.vectors == expect);
  CHECK(t.find("b") == std::optional<std::size_t>(1));
  CHECK(!t.find("B").has_value());

  const EmbeddingTable one = read_vec_text(p, 1);
  CHECK(one.tokens == std::vector<std::string>{"a"});
  CHECK(one.vectors.rows() == 1);

  const fs::path short_line = write(dir, "b.vec", "2 3\na 1 2 3\nb 4 5\n");
  try {
    read_vec_text(short_line);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(read_vec_text(write(dir, "c.vec", "two 3\na 1 2 3\n")), ParseError);
  CHECK_THROWS_AS(read_vec_text(write(dir, "d.vec", "1 3\na 1 x 3\n")), ParseError);
  CHECK_THROWS_AS(read_vec_text(dir / "missing.vec"), IoError);

  const EmbeddingTable dup = read_vec_text(write(dir, "e.vec", "3 1\na 1\nb 2\na 3\n"));
  CHECK(dup.tokens == std::vector<std::string>{"a", "b"});
  CHECK(dup.vectors(0, 0) == 1.0);
  fs::remove_all(dir);
}

TEST_CASE("vec text round trip is exact") {
  const fs::path dir = test::temp_dir("vecrt");
  Rng rng(1);
  EmbeddingTable t;
  t.tokens = {"alpha", "Beta", "gamma", "δέλτα"};
  t.vectors = rng.normal_matrix(4, 5) * 1e3;
  t.vectors(0, 0) = 1e-300;
  write_vec_text(dir / "t.vec", t);
  const EmbeddingTable back = read_vec_text(dir / "t.vec");
  CHECK(back.tokens == t.tokens);
  CHECK(back.vectors == t.vectors);
  fs::remove_all(dir);
}

TEST_CASE("csv matrices and labels") {
  const fs::path dir = test::temp_dir("csv");
  Matrix expect(2, 2);
  expect << 1, 2, 3, 4;
  CHECK(read_matrix_csv(write(dir, "a.csv", "1,2\n3,4")) == expect);
  try {
    read_matrix_csv(write(dir, "b.csv", "1,2\n3\n"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  CHECK_THROWS_AS(read_matrix_csv(write(dir, "c.csv", "")), ParseError);
  CHECK_THROWS_AS(read_matrix_csv(write(dir, "d.csv", "1,abc\n")), ParseError);

  Rng rng(2);
  const Matrix m = rng.normal_matrix(7, 3);
  write_matrix_csv(dir / "m.csv", m);
  CHECK(read_matrix_csv(dir / "m.csv") == m);

  CHECK(read_labels(write(dir, "l.txt", "0\n2\n1\n"), 3) == std::vector<int>{0, 2, 1});
  CHECK_THROWS_AS(read_labels(write(dir, "l2.txt", "0\n1.5\n")), ParseError);
  CHECK_THROWS_AS(read_labels(write(dir, "l3.txt", "0\n3\n"), 3), ValidationError);
  CHECK_THROWS_AS(read_labels(write(dir, "l4.txt", "-1\n")), ValidationError);
  write_labels(dir / "l5.txt", {3, 1, 4});
  CHECK(read_labels(dir / "l5.txt") == std::vector<int>{3, 1, 4});
  fs::remove_all(dir);
}

TEST_CASE("dictionaries by token and by index") {
  const fs::path dir = test::temp_dir("dict");
  EmbeddingTable src, tgt;
  src.tokens = {"cat", "dog"};
  src.vectors = Matrix::Zero(2, 2);
  tgt.tokens = {"chien", "chat", "felin"};
  tgt.vectors = Matrix::Zero(3, 2);
  const fs::path p = write(dir, "d.txt", "cat chat\ncat felin\ndog chien\nbird oiseau\n");
  std::size_t skipped = 0;
  const Dictionary d = read_dictionary(p, &src, &tgt, &skipped);
  CHECK(d == Dictionary{{0, 1}, {0, 2}, {1, 0}});
  CHECK(skipped == 1);
  write_dictionary(dir / "i.txt", d);
  CHECK(read_dictionary(dir / "i.txt") == d);
  fs::remove_all(dir);
}

TEST_CASE("binary matrices: exact round trip, metadata, corruption") {
  const fs::path dir = test::temp_dir("bin");
  Rng rng(3);
  const Matrix m = rng.normal_matrix(9, 4);
  write_matrix_bin(dir / "m", m, {{"role", "x1"}});
  nlohmann::json meta;
  CHECK(read_matrix_bin(dir / "m", &meta) == m);
  CHECK(meta["role"] == "x1");
  CHECK(fs::file_size(dir / "m.bin") == 9 * 4 * 8);
  const nlohmann::json side = nlohmann::json::parse(read_text_file(dir / "m.json"));
  CHECK(side["rows"] == 9);
  CHECK(side["dtype"] == "float64-le");

  fs::resize_file(dir / "m.bin", 9 * 4 * 8 - 8);
  CHECK_THROWS_AS(read_matrix_bin(dir / "m"), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("dataset store round trip") {
  const fs::path dir = test::temp_dir("ds");
  const Preset p = preset("thm1b", 4);
  const SyntheticDataset ds = generate_from_preset(p, 500, 4);
  const DatasetInfo info{"thm1b", p.latent, 4, 500, 0.05};
  const nlohmann::json manifest = save_dataset(dir, ds, info, true);
  nlohmann::json loaded_manifest;
  const SyntheticDataset back = load_dataset(dir, &loaded_manifest);
  CHECK(back.x1 == ds.x1);
  CHECK(back.x2 == ds.x2);
  CHECK(back.c == ds.c);
  CHECK(back.alignment == ds.alignment);
  CHECK(back.mixing.a1 == ds.mixing.a1);
  CHECK(back.test.x2 == ds.test.x2);
  CHECK(loaded_manifest == manifest);
  CHECK(fs::exists(dir / "x1.csv"));

  // same inputs, same bytes
  const fs::path dir2 = test::temp_dir("ds2");
  CHECK(save_dataset(dir2, ds, info)["content_hash"] == manifest["content_hash"]);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("model store round trip") {
  const fs::path dir = test::temp_dir("model");
  const SyntheticDataset ds = generate_from_preset(preset("thm1a", 5), 800, 5);
  SolverConfig cfg;
  cfg.d_shared = 2;
  cfg.batch = 200;
  cfg.epochs = 2;
  cfg.eval_rows = 200;
  const FitResult fit_result = fit(ds.x1, ds.x2, cfg);
  save_model(dir, fit_result, {{"note", "x"}});
  nlohmann::json echo;
  const FitResult back = load_model(dir, &echo);
  CHECK(back.q1->q == fit_result.q1->q);
  CHECK(back.q2->q == fit_result.q2->q);
  CHECK(back.q1->covariance == fit_result.q1->covariance);
  CHECK(back.bandwidths == fit_result.bandwidths);
  REQUIRE(back.trace.size() == fit_result.trace.size());
  CHECK(back.trace.back().total == fit_result.trace.back().total);
  REQUIRE(back.checkpoints.size() == fit_result.checkpoints.size());
  CHECK(back.checkpoints.back().matcher == fit_result.checkpoints.back().matcher);
  CHECK(back.config.to_json() == fit_result.config.to_json());
  CHECK(echo["note"] == "x");
  CHECK(fs::exists(dir / "trace.csv"));
  fs::remove_all(dir);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}
