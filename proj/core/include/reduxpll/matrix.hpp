// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace reduxpll {

using Vector = std::vector<double>;

/// Dense row-major fp64 matrix. Binary operations check shapes and throw
/// DimensionError on mismatch.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix from_flat(std::size_t rows, std::size_t cols, Vector values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// transpose(a) * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * transpose(b)
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Gathers the listed rows into a new matrix.
Matrix select_rows(const Matrix& m, std::span<const std::size_t> indices);

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(std::span<const double> values, std::string_view what);

bool all_finite(std::span<const double> values) noexcept;

}  // namespace reduxpll
