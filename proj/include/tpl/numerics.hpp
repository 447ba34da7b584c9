#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace tpl {

using Vector = std::vector<double>;

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> entries() noexcept { return data_; }
  std::span<const double> entries() const noexcept { return data_; }

  bool all_finite() const noexcept;
  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix multiply(const Matrix& a, const Matrix& b);
Vector multiply(const Matrix& m, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> x);
double squared_distance(std::span<const double> a, std::span<const double> b);
// xᵀ M x
double quadratic_form(const Matrix& m, std::span<const double> x);

bool is_symmetric(const Matrix& m, double tolerance = 1e-8);

// Lower-triangular Cholesky factor, or nullopt if the matrix is not positive definite.
std::optional<Matrix> cholesky(const Matrix& m);

struct SpdInverse {
  Matrix inverse;
  double ridge_used = 0.0;
};

// Inverse of (m + ridge·I). Escalates the ridge (x10, capped at 1e-3) when the
// factorization fails; throws NotSymmetric / NotPositiveDefinite.
SpdInverse spd_inverse_with_ridge(const Matrix& m, double ridge);
Matrix spd_inverse(const Matrix& m, double ridge);

double log_sum_exp(std::span<const double> values);
Vector softmax(std::span<const double> values, double temperature = 1.0);

double sigmoid(double x) noexcept;

// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

double sum(std::span<const double> values) noexcept;
double mean(std::span<const double> values);

}  // namespace tpl
