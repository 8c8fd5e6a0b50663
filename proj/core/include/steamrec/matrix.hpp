#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "steamrec/errors.hpp"
#include "steamrec/rng.hpp"

namespace steamrec {

// Dense row-major matrix of doubles. Small and deliberately plain: all the
// interesting structure lives in the tape ops built on top of it.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw ShapeError("negative matrix dimension " + shape_str());
  }

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix full(int r, int c, double v) {
    Matrix m(r, c);
    for (double& x : m.data) x = v;
    return m;
  }

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  bool all_finite() const;
};

// C = A * B. Throws ShapeError naming both shapes on inner-dim mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// Accumulating kernels used by backward rules: out += ...
// Shapes are checked; `out` must already have the result shape.
void add_matmul_nn(const Matrix& a, const Matrix& b, Matrix& out);  // out += A*B
void add_matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);  // out += A*B^T
void add_matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);  // out += A^T*B

// Numerically stable softmax over each row (max subtraction).
Matrix row_softmax(const Matrix& x);

// Fills a matrix with samples from U(-s, s), s = sqrt(6 / (rows + cols)).
// Draws proceed in row-major order so the result is reproducible.
Matrix xavier_uniform(int rows, int cols, Rng& rng);

}  // namespace steamrec
