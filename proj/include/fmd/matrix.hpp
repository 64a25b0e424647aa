#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmd {

// Dense row-major matrix of doubles. The only numeric container in the
// project; embeddings, weights and attention maps all live here.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // rows * cols, row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), values(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("matrix: negative dimension");
  }
  Matrix(int r, int c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != static_cast<size_t>(r) * c)
      throw std::invalid_argument("matrix: value count " + std::to_string(values.size()) +
                                  " does not match " + std::to_string(r) + "x" + std::to_string(c));
  }

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return values.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return values.data() + static_cast<size_t>(r) * cols; }

  bool empty() const { return rows == 0 || cols == 0; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Copy of rows [lo, hi).
  Matrix slice_rows(int lo, int hi) const {
    check_row_range(lo, hi);
    Matrix out(hi - lo, cols);
    std::copy(values.begin() + static_cast<size_t>(lo) * cols,
              values.begin() + static_cast<size_t>(hi) * cols, out.values.begin());
    return out;
  }

  // Copy of columns [lo, hi).
  Matrix slice_cols(int lo, int hi) const {
    if (lo < 0 || hi > cols || lo > hi)
      throw std::invalid_argument("matrix: column range [" + std::to_string(lo) + "," +
                                  std::to_string(hi) + ") out of 0.." + std::to_string(cols));
    Matrix out(rows, hi - lo);
    for (int r = 0; r < rows; ++r)
      std::copy(row(r) + lo, row(r) + hi, out.row(r));
    return out;
  }

  void set_rows(int lo, const Matrix& block) {
    if (block.cols != cols || lo < 0 || lo + block.rows > rows)
      throw std::invalid_argument("matrix: set_rows block does not fit");
    std::copy(block.values.begin(), block.values.end(),
              values.begin() + static_cast<size_t>(lo) * cols);
  }

  void set_cols(int lo, const Matrix& block) {
    if (block.rows != rows || lo < 0 || lo + block.cols > cols)
      throw std::invalid_argument("matrix: set_cols block does not fit");
    for (int r = 0; r < rows; ++r)
      std::copy(block.row(r), block.row(r) + block.cols, row(r) + lo);
  }

  void append_rows(const Matrix& block) {
    if (rows == 0 && cols == 0) cols = block.cols;
    if (block.cols != cols)
      throw std::invalid_argument("matrix: append_rows width mismatch (" +
                                  std::to_string(block.cols) + " vs " + std::to_string(cols) + ")");
    values.insert(values.end(), block.values.begin(), block.values.end());
    rows += block.rows;
  }

  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && values == o.values;
  }

 private:
  void check_row_range(int lo, int hi) const {
    if (lo < 0 || hi > rows || lo > hi)
      throw std::invalid_argument("matrix: row range [" + std::to_string(lo) + "," +
                                  std::to_string(hi) + ") out of 0.." + std::to_string(rows));
  }
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace fmd
