#include "tpl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tpl/error.hpp"
#include "tpl/log.hpp"

namespace tpl {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (data_.size() != rows * cols) {
    throw Error(Errc::shape_mismatch, "matrix entry count does not match rows*cols");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(Errc::shape_mismatch, "matrix product shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Vector multiply(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) throw Error(Errc::shape_mismatch, "matrix-vector shape mismatch");
  Vector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), x);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double quadratic_form(const Matrix& m, std::span<const double> x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) acc += x[i] * dot(m.row(i), x);
  return acc;
}

bool is_symmetric(const Matrix& m, double tolerance) {
  if (m.rows() != m.cols()) return false;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      const double a = m(i, j);
      const double b = m(j, i);
      const double scale = std::max({1.0, std::abs(a), std::abs(b)});
      if (std::abs(a - b) > tolerance * scale) return false;
    }
  }
  return true;
}

std::optional<Matrix> cholesky(const Matrix& m) {
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = m(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) return std::nullopt;
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = m(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

namespace {

// Inverse from a lower Cholesky factor: solve L Lᵀ X = I column by column.
Matrix inverse_from_cholesky(const Matrix& l) {
  const std::size_t n = l.rows();
  Matrix inv(n, n);
  Vector y(n);
  for (std::size_t col = 0; col < n; ++col) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = (i == col) ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * y[k];
      y[i] = v / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double v = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) v -= l(k, ii) * inv(k, col);
      inv(ii, col) = v / l(ii, ii);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = s;
      inv(j, i) = s;
    }
  }
  return inv;
}

constexpr double kMaxRidge = 1e-3;

}  // namespace

SpdInverse spd_inverse_with_ridge(const Matrix& m, double ridge) {
  if (m.rows() != m.cols()) throw Error(Errc::not_symmetric, "matrix is not square");
  if (ridge < 0.0 || !std::isfinite(ridge)) {
    throw Error(Errc::invalid_argument, "ridge must be a nonnegative finite number");
  }
  if (!is_symmetric(m)) throw Error(Errc::not_symmetric, "matrix is not symmetric to 1e-8");

  const std::size_t n = m.rows();
  double current = ridge;
  for (;;) {
    Matrix shifted = m;
    for (std::size_t i = 0; i < n; ++i) shifted(i, i) += current;
    if (auto l = cholesky(shifted)) {
      if (current != ridge) {
        std::ostringstream msg;
        msg << "spd_inverse: ridge escalated from " << ridge << " to " << current;
        log::warn(msg.str());
      }
      return {inverse_from_cholesky(*l), current};
    }
    if (current >= kMaxRidge) break;
    current = (current == 0.0) ? 1e-12 : std::min(current * 10.0, kMaxRidge);
  }
  std::ostringstream msg;
  msg << "factorization failed with ridge up to " << current;
  throw Error(Errc::not_positive_definite, msg.str());
}

Matrix spd_inverse(const Matrix& m, double ridge) {
  return spd_inverse_with_ridge(m, ridge).inverse;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::empty_input, "log_sum_exp of an empty list");
  if (values.size() == 1) return values[0];
  const double top = *std::max_element(values.begin(), values.end());
  if (std::isinf(top)) return top;
  CompensatedSum acc;
  for (double v : values) acc.add(std::exp(v - top));
  return top + std::log(acc.value());
}

Vector softmax(std::span<const double> values, double temperature) {
  if (values.empty()) throw Error(Errc::empty_input, "softmax of an empty list");
  if (!(temperature > 0.0)) {
    throw Error(Errc::non_positive_temperature, "softmax temperature must be positive");
  }
  const double top = *std::max_element(values.begin(), values.end());
  Vector out(values.size());
  CompensatedSum total;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp((values[i] - top) / temperature);
    total.add(out[i]);
  }
  const double z = total.value();
  for (double& v : out) v /= z;
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void CompensatedSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    compensation_ += (sum_ - t) + x;
  } else {
    compensation_ += (x - t) + sum_;
  }
  sum_ = t;
}

double sum(std::span<const double> values) noexcept {
  CompensatedSum acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

double mean(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::empty_input, "mean of an empty list");
  return sum(values) / static_cast<double>(values.size());
}

}  // namespace tpl
