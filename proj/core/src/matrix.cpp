#include "steamrec/matrix.hpp"

#include <cmath>

namespace steamrec {

bool Matrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

void require_inner(const Matrix& a, const Matrix& b, int a_inner, int b_inner,
                   const char* what) {
  if (a_inner != b_inner) {
    throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_str() + " and " +
                     b.shape_str());
  }
}

}  // namespace

// i-k-j loop order: the inner loop walks both B and C rows contiguously,
// which the compiler vectorizes well.
void add_matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  require_inner(a, b, a.cols, b.rows, "matmul");
  if (out.rows != a.rows || out.cols != b.cols) {
    throw ShapeError("matmul: output shape " + out.shape_str() + " does not match " +
                     std::to_string(a.rows) + "x" + std::to_string(b.cols));
  }
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int i = 0; i < n; ++i) {
    const double* arow = a.row(i);
    double* crow = out.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.row(p);
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void add_matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  require_inner(a, b, a.cols, b.cols, "matmul_nt");
  if (out.rows != a.rows || out.cols != b.rows) {
    throw ShapeError("matmul_nt: output shape " + out.shape_str() + " does not match " +
                     std::to_string(a.rows) + "x" + std::to_string(b.rows));
  }
  const int n = a.rows, k = a.cols, m = b.rows;
  for (int i = 0; i < n; ++i) {
    const double* arow = a.row(i);
    double* crow = out.row(i);
    for (int j = 0; j < m; ++j) {
      const double* brow = b.row(j);
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

void add_matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  require_inner(a, b, a.rows, b.rows, "matmul_tn");
  if (out.rows != a.cols || out.cols != b.cols) {
    throw ShapeError("matmul_tn: output shape " + out.shape_str() + " does not match " +
                     std::to_string(a.cols) + "x" + std::to_string(b.cols));
  }
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int p = 0; p < n; ++p) {
    const double* arow = a.row(p);
    const double* brow = b.row(p);
    for (int i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = out.row(i);
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_inner(a, b, a.cols, b.rows, "matmul");
  Matrix out(a.rows, b.cols);
  add_matmul_nn(a, b, out);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_inner(a, b, a.cols, b.cols, "matmul_nt");
  Matrix out(a.rows, b.rows);
  add_matmul_nt(a, b, out);
  return out;
}

Matrix row_softmax(const Matrix& x) {
  if (x.cols == 0) throw ShapeError("row_softmax on matrix with zero columns");
  Matrix out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* in = x.row(i);
    double* o = out.row(i);
    double mx = in[0];
    for (int j = 1; j < x.cols; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (int j = 0; j < x.cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < x.cols; ++j) o[j] *= inv;
  }
  return out;
}

Matrix xavier_uniform(int rows, int cols, Rng& rng) {
  if (rows <= 0 || cols <= 0) {
    throw ShapeError("xavier_uniform requires positive dimensions, got " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  const double s = std::sqrt(6.0 / (static_cast<double>(rows) + static_cast<double>(cols)));
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform_range(-s, s);
  return m;
}

}  // namespace steamrec
