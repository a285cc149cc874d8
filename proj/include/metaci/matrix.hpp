#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaci {

// Dense row-major matrix of doubles. Every public operation checks that the
// result is finite; NaN/Inf anywhere is treated as a hard error.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) {
      throw std::runtime_error("Matrix: construct produced non-finite values");
    }
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " +
                                  std::to_string(data_.size()) +
                                  " != rows*cols " +
                                  std::to_string(rows_ * cols_));
    }
    check_finite("construct");
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw std::invalid_argument("Matrix: ragged rows");
      std::size_t j = 0;
      for (double v : r) m(i, j++) = v;
      ++i;
    }
    m.check_finite("from_rows");
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double& at(std::size_t i, std::size_t j) {
    bounds_check(i, j);
    return data_[i * cols_ + j];
  }
  double at(std::size_t i, std::size_t j) const {
    bounds_check(i, j);
    return data_[i * cols_ + j];
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }
  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }

  std::vector<double> row(std::size_t i) const {
    return {row_ptr(i), row_ptr(i) + cols_};
  }

  // C = this * rhs, accumulating over k in ascending order for each (i, j).
  Matrix multiply(const Matrix& rhs) const {
    if (cols_ != rhs.rows_) {
      throw std::invalid_argument("Matrix::multiply: shape mismatch " + shape_str() +
                                  " x " + rhs.shape_str());
    }
    Matrix out(rows_, rhs.cols_);
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* a = row_ptr(i);
      double* c = out.row_ptr(i);
      for (std::size_t k = 0; k < cols_; ++k) {
        const double aik = a[k];
        const double* b = rhs.row_ptr(k);
        for (std::size_t j = 0; j < rhs.cols_; ++j) c[j] += aik * b[j];
      }
    }
    out.check_finite("multiply");
    return out;
  }

  Matrix transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
    return out;
  }

  Matrix& add_in_place(const Matrix& rhs) {
    require_same_shape(rhs, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
    check_finite("add");
    return *this;
  }

  Matrix& scale_in_place(double s) {
    for (double& v : data_) v *= s;
    check_finite("scale");
    return *this;
  }

  // this += s * rhs
  Matrix& axpy_in_place(double s, const Matrix& rhs) {
    require_same_shape(rhs, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * rhs.data_[i];
    check_finite("axpy");
    return *this;
  }

  // elementwise product
  Matrix& hadamard_in_place(const Matrix& rhs) {
    require_same_shape(rhs, "hadamard");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] *= rhs.data_[i];
    check_finite("hadamard");
    return *this;
  }

  std::vector<double> col_sums() const {
    std::vector<double> s(cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* r = row_ptr(i);
      for (std::size_t j = 0; j < cols_; ++j) s[j] += r[j];
    }
    return s;
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  void check_finite(const char* op) const {
    for (double v : data_) {
      if (!std::isfinite(v)) {
        throw std::runtime_error(std::string("Matrix::") + op +
                                 ": non-finite entry produced");
      }
    }
  }

 private:
  void bounds_check(std::size_t i, std::size_t j) const {
    if (i >= rows_ || j >= cols_) {
      throw std::out_of_range("Matrix::at(" + std::to_string(i) + "," +
                              std::to_string(j) + ") on " + shape_str());
    }
  }

  void require_same_shape(const Matrix& rhs, const char* op) const {
    if (rows_ != rhs.rows_ || cols_ != rhs.cols_) {
      throw std::invalid_argument(std::string("Matrix::") + op +
                                  ": shape mismatch " + shape_str() + " vs " +
                                  rhs.shape_str());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace metaci
