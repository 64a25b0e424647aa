#pragma once

#include "fmd/matrix.hpp"

#include <vector>

namespace fmd {

// Numeric kernels exist in two builds: an OpenMP-parallel one used by
// default and a serial reference kept for testing. Parallelism is per
// output row, so each element is accumulated in the same order in both
// backends and results are bit-identical regardless of thread count.
enum class KernelBackend { serial, openmp };

void set_kernel_backend(KernelBackend b);
KernelBackend kernel_backend();

namespace serial {
void matmul_into(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b^T
void matmul_nt_into(const Matrix& a, const Matrix& b, Matrix& out);
void softmax_rows_inplace(Matrix& m);
void silu_mul_inplace(Matrix& gate, const Matrix& up);  // gate = silu(gate) .* up
void add_inplace(Matrix& a, const Matrix& b);
void rms_norm_rows_into(const Matrix& m, const std::vector<double>& gain, double eps,
                        Matrix& out);
}  // namespace serial

namespace openmp {
void matmul_into(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt_into(const Matrix& a, const Matrix& b, Matrix& out);
void softmax_rows_inplace(Matrix& m);
void silu_mul_inplace(Matrix& gate, const Matrix& up);
void add_inplace(Matrix& a, const Matrix& b);
void rms_norm_rows_into(const Matrix& m, const std::vector<double>& gain, double eps,
                        Matrix& out);
}  // namespace openmp

// ---- dispatching front-ends (the public tensor operations) ----

// Standard matrix product; requires a.cols == b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

// a * b^T; requires a.cols == b.cols.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// Row-wise softmax with per-row max subtraction. Entries at -1e9 relative
// to the row max underflow to exactly 0 after exponentiation.
Matrix softmax_rows(const Matrix& m);

// out[i] = gain[i] * v[i] / sqrt(mean(v^2) + eps)
std::vector<double> rms_norm(const std::vector<double>& v, const std::vector<double>& gain,
                             double eps);

// Applies rms_norm to every row of m with a shared gain vector.
Matrix rms_norm_rows(const Matrix& m, const std::vector<double>& gain, double eps);

void silu_mul_inplace(Matrix& gate, const Matrix& up);
void add_inplace(Matrix& a, const Matrix& b);

}  // namespace fmd
