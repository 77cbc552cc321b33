#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "usca/numerics.hpp"

namespace usca::test {

inline Matrix random_symmetric(Index n, Rng& rng) {
  const Matrix a = rng.normal_matrix(n, n);
  return (a + a.transpose()) * 0.5;
}

inline Matrix random_spd(Index n, Rng& rng) {
  const Matrix a = rng.normal_matrix(n, n);
  return a * a.transpose() + Matrix::Identity(n, n) * 0.5;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 gen(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() /
             ("usca-test-" + tag + "-" + std::to_string(gen()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace usca::test
