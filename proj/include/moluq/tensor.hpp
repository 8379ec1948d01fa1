#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "moluq/error.hpp"

namespace moluq {

// Dense row-major matrix of 64-bit floats. Scalars are (1,1), row vectors
// (1,n). Rank never exceeds 2; that is all the models need.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols) fail(Err::ShapeMismatch, "tensor data length != rows*cols");
  }

  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(1, n, std::move(v));
  }
  static Tensor col(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(n, 1, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    fail(Err::ShapeMismatch,
         std::string(what) + " shapes " + a.shape_str() + " vs " + b.shape_str());
}

// out += a * b when accumulate, else out = a * b
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols != b.rows)
    fail(Err::ShapeMismatch, "matmul inner dims " + a.shape_str() + " vs " + b.shape_str());
  if (out.rows != a.rows || out.cols != b.cols) {
    out = Tensor(a.rows, b.cols);
  } else if (!accumulate) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
  }
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double aij = arow[j];
      if (aij == 0.0) continue;
      const double* brow = b.row_ptr(j);
      for (std::size_t k = 0; k < b.cols; ++k) orow[k] += aij * brow[k];
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.cols);
  matmul_into(a, b, out, true);
  return out;
}

// out (+)= a * b^T
inline void matmul_nt_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols != b.cols)
    fail(Err::ShapeMismatch, "matmul_nt inner dims " + a.shape_str() + " vs " + b.shape_str());
  if (out.rows != a.rows || out.cols != b.rows) {
    out = Tensor(a.rows, b.rows);
  } else if (!accumulate) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
  }
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t k = 0; k < b.rows; ++k) {
      const double* brow = b.row_ptr(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < a.cols; ++j) acc += arow[j] * brow[j];
      orow[k] += acc;
    }
  }
}

inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.rows);
  matmul_nt_into(a, b, out, true);
  return out;
}

// out (+)= a^T * b
inline void matmul_tn_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.rows != b.rows)
    fail(Err::ShapeMismatch, "matmul_tn inner dims " + a.shape_str() + " vs " + b.shape_str());
  if (out.rows != a.cols || out.cols != b.cols) {
    out = Tensor(a.cols, b.cols);
  } else if (!accumulate) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
  }
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    const double* brow = b.row_ptr(i);
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double aij = arow[j];
      if (aij == 0.0) continue;
      double* orow = out.row_ptr(j);
      for (std::size_t k = 0; k < b.cols; ++k) orow[k] += aij * brow[k];
    }
  }
}

}  // namespace moluq
