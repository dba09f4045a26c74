// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit tests.
#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "reduxpll/matrix.hpp"
#include "reduxpll/mlp.hpp"

namespace testutil {

using reduxpll::Matrix;
using reduxpll::Vector;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.flat()) v = n(rng);
  return m;
}

inline Vector random_simplex(std::size_t c, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Vector v(c);
  double s = 0.0;
  for (double& x : v) s += (x = e(rng) + 1e-3);
  for (double& x : v) x /= s;
  return v;
}

inline Matrix random_simplex_rows(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const Vector v = random_simplex(c, rng);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double rel_error(std::span<const double> a, std::span<const double> b) {
  Vector d(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) d[k] = a[k] - b[k];
  return norm2(d) / std::max(norm2(b), 1e-12);
}

/// Fresh, empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::path(REDUXPLL_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
