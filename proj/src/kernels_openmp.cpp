#include "fmd/kernels.hpp"

#include <cmath>

// Each parallel loop assigns whole output rows to threads; per-element
// accumulation order is identical to the serial backend, so both produce
// bit-identical results for any thread count. Blocks under four rows are
// handed to the serial kernels before any parallel region is entered;
// team setup costs more than the work there even with an if clause.

namespace fmd::openmp {

namespace {
constexpr int kMinParallelRows = 4;
}

void matmul_into(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows < kMinParallelRows) return serial::matmul_into(a, b, out);
  const int m = a.rows, k = a.cols, n = b.cols;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* out_row = out.row(i);
    for (int j = 0; j < n; ++j) out_row[j] = 0.0;
    const double* a_row = a.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = a_row[p];
      const double* b_row = b.row(p);
      for (int j = 0; j < n; ++j) out_row[j] += av * b_row[j];
    }
  }
}

void matmul_nt_into(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows < kMinParallelRows) return serial::matmul_nt_into(a, b, out);
  const int m = a.rows, k = a.cols, n = b.rows;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* a_row = a.row(i);
    double* out_row = out.row(i);
    for (int j = 0; j < n; ++j) {
      const double* b_row = b.row(j);
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
      out_row[j] = acc;
    }
  }
}

void softmax_rows_inplace(Matrix& m) {
  if (m.rows < kMinParallelRows) return serial::softmax_rows_inplace(m);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m.rows; ++i) {
    double* r = m.row(i);
    double mx = r[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (int j = 0; j < m.cols; ++j) r[j] /= sum;
  }
}

void silu_mul_inplace(Matrix& gate, const Matrix& up) {
  if (gate.rows < kMinParallelRows) return serial::silu_mul_inplace(gate, up);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < gate.rows; ++i) {
    double* g = gate.row(i);
    const double* u = up.row(i);
    for (int j = 0; j < gate.cols; ++j) {
      const double x = g[j];
      g[j] = x / (1.0 + std::exp(-x)) * u[j];
    }
  }
}

void add_inplace(Matrix& a, const Matrix& b) {
  if (a.rows < kMinParallelRows) return serial::add_inplace(a, b);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.rows; ++i) {
    double* ar = a.row(i);
    const double* br = b.row(i);
    for (int j = 0; j < a.cols; ++j) ar[j] += br[j];
  }
}

void rms_norm_rows_into(const Matrix& m, const std::vector<double>& gain, double eps,
                        Matrix& out) {
  if (m.rows < kMinParallelRows) return serial::rms_norm_rows_into(m, gain, eps, out);
  const int n = m.cols;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < m.rows; ++r) {
    const double* src = m.row(r);
    double* dst = out.row(r);
    double sumsq = 0.0;
    for (int j = 0; j < n; ++j) sumsq += src[j] * src[j];
    const double inv = 1.0 / std::sqrt(sumsq / static_cast<double>(n) + eps);
    for (int j = 0; j < n; ++j) dst[j] = gain[j] * src[j] * inv;
  }
}

}  // namespace fmd::openmp
