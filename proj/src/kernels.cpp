#include "fmd/kernels.hpp"
#include "fmd/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace fmd {

namespace {
KernelBackend g_backend = KernelBackend::openmp;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}
}  // namespace

void set_kernel_backend(KernelBackend b) { g_backend = b; }
KernelBackend kernel_backend() { return g_backend; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a) + " * " +
                                shape_str(b));
  Matrix out(a.rows, b.cols);
  if (g_backend == KernelBackend::openmp)
    openmp::matmul_into(a, b, out);
  else
    serial::matmul_into(a, b, out);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    throw std::invalid_argument("matmul_nt: inner dimensions differ, " + shape_str(a) + " * " +
                                shape_str(b) + "^T");
  Matrix out(a.rows, b.rows);
  if (g_backend == KernelBackend::openmp)
    openmp::matmul_nt_into(a, b, out);
  else
    serial::matmul_nt_into(a, b, out);
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out = m;
  if (out.empty()) return out;
  if (g_backend == KernelBackend::openmp)
    openmp::softmax_rows_inplace(out);
  else
    serial::softmax_rows_inplace(out);
  return out;
}

std::vector<double> rms_norm(const std::vector<double>& v, const std::vector<double>& gain,
                             double eps) {
  if (v.size() != gain.size())
    throw std::invalid_argument("rms_norm: value length " + std::to_string(v.size()) +
                                " does not match gain length " + std::to_string(gain.size()));
  if (v.empty()) throw std::invalid_argument("rms_norm: empty vector");
  double sumsq = 0.0;
  for (double x : v) sumsq += x * x;
  const double inv = 1.0 / std::sqrt(sumsq / static_cast<double>(v.size()) + eps);
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = gain[i] * v[i] * inv;
  return out;
}

Matrix rms_norm_rows(const Matrix& m, const std::vector<double>& gain, double eps) {
  if (static_cast<size_t>(m.cols) != gain.size())
    throw std::invalid_argument("rms_norm_rows: width " + std::to_string(m.cols) +
                                " does not match gain length " + std::to_string(gain.size()));
  Matrix out(m.rows, m.cols);
  if (g_backend == KernelBackend::openmp)
    openmp::rms_norm_rows_into(m, gain, eps, out);
  else
    serial::rms_norm_rows_into(m, gain, eps, out);
  return out;
}

void silu_mul_inplace(Matrix& gate, const Matrix& up) {
  if (gate.rows != up.rows || gate.cols != up.cols)
    throw std::invalid_argument("silu_mul: shape mismatch, " + shape_str(gate) + " vs " +
                                shape_str(up));
  if (g_backend == KernelBackend::openmp)
    openmp::silu_mul_inplace(gate, up);
  else
    serial::silu_mul_inplace(gate, up);
}

void add_inplace(Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument("add: shape mismatch, " + shape_str(a) + " vs " + shape_str(b));
  if (g_backend == KernelBackend::openmp)
    openmp::add_inplace(a, b);
  else
    serial::add_inplace(a, b);
}

void gaussian_pair(Rng& rng, double& z0, double& z1) {
  // u1 in (0,1] so the log stays finite
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  z0 = r * std::cos(theta);
  z1 = r * std::sin(theta);
}

Matrix seeded_gaussian(Rng& rng, int rows, int cols, double mean, double stddev) {
  if (stddev < 0.0) throw std::invalid_argument("seeded_gaussian: negative stddev");
  Matrix out(rows, cols);
  const size_t n = out.values.size();
  for (size_t i = 0; i < n; i += 2) {
    double z0, z1;
    gaussian_pair(rng, z0, z1);
    out.values[i] = mean + stddev * z0;
    if (i + 1 < n) out.values[i + 1] = mean + stddev * z1;
  }
  return out;
}

}  // namespace fmd
