#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "fmd/kernels.hpp"
#include "fmd/rng.hpp"

using namespace fmd;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double lo = -2.0, double hi = 2.0) {
  Matrix m(r, c);
  for (double& v : m.values) v = lo + (hi - lo) * rng.uniform();
  return m;
}

// independent oracle: plain i-j-k triple loop
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  Rng rng(1);
  Matrix a = random_matrix(rng, 3, 3);
  CHECK(matmul(Matrix::identity(3), a) == a);
  CHECK(matmul(a, Matrix::identity(3)) == a);

  Matrix s1(1, 1, {2.0}), s2(1, 1, {3.0});
  CHECK(matmul(s1, s2).at(0, 0) == 6.0);
}

TEST_CASE("matmul agrees with the naive triple-loop oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_matrix(rng, 4, 4);
    Matrix b = random_matrix(rng, 4, 4);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) <= 1e-12);
  }
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  try {
    matmul(Matrix(2, 3), Matrix(2, 5));
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("2x5") != std::string::npos);
  }
}

TEST_CASE("matmul associativity within 1e-9 relative") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_matrix(rng, 5, 4);
    Matrix b = random_matrix(rng, 4, 6);
    Matrix c = random_matrix(rng, 6, 3);
    Matrix lhs = matmul(matmul(a, b), c);
    Matrix rhs = matmul(a, matmul(b, c));
    double scale = 1.0;
    for (double v : lhs.values) scale = std::max(scale, std::abs(v));
    CHECK(max_abs_diff(lhs, rhs) <= 1e-9 * scale);
  }
}

TEST_CASE("matmul_nt equals matmul against the explicit transpose") {
  Rng rng(4);
  Matrix a = random_matrix(rng, 5, 7);
  Matrix b = random_matrix(rng, 6, 7);
  Matrix bt(7, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 7; ++j) bt.at(j, i) = b.at(i, j);
  CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, bt)) <= 1e-12);
}

TEST_CASE("softmax analytic rows") {
  Matrix sym(1, 2, {0.0, 0.0});
  Matrix s = softmax_rows(sym);
  CHECK(s.at(0, 0) == 0.5);
  CHECK(s.at(0, 1) == 0.5);

  Matrix ln3(1, 2, {std::log(3.0), 0.0});
  Matrix s2 = softmax_rows(ln3);
  CHECK(s2.at(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s2.at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));

  Matrix masked(1, 3, {5.0, -1e9, 1.0});
  Matrix s3 = softmax_rows(masked);
  CHECK(s3.at(0, 1) <= 1e-30);
}

TEST_CASE("softmax rows sum to one for wide-range inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix m = random_matrix(rng, 4, 9, -50.0, 50.0);
    Matrix s = softmax_rows(m);
    for (int r = 0; r < s.rows; ++r) {
      double sum = 0.0;
      for (int c = 0; c < s.cols; ++c) {
        CHECK(s.at(r, c) >= 0.0);
        sum += s.at(r, c);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("rms_norm examples") {
  std::vector<double> gain(4, 1.0);
  std::vector<double> ones(4, 1.0);
  CHECK(rms_norm(ones, gain, 0.0) == ones);

  std::vector<double> zeros(4, 0.0);
  CHECK(rms_norm(zeros, gain, 1e-3) == zeros);

  std::vector<double> v = {3.0, 4.0};
  std::vector<double> out = rms_norm(v, {1.0, 1.0}, 0.0);
  const double denom = std::sqrt(12.5);  // mean(9, 16) = 12.5
  CHECK(out[0] == doctest::Approx(3.0 / denom).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(4.0 / denom).epsilon(1e-15));

  CHECK_THROWS_AS(rms_norm(v, gain, 1e-5), std::invalid_argument);
}

TEST_CASE("gaussian draws: determinism, degenerate std, moments") {
  Rng a(42), b(42);
  Matrix ma = seeded_gaussian(a, 7, 5, 0.0, 1.0);
  Matrix mb = seeded_gaussian(b, 7, 5, 0.0, 1.0);
  CHECK(ma == mb);

  Rng c(9);
  Matrix mc = seeded_gaussian(c, 3, 4, -1.5, 0.0);
  for (double v : mc.values) CHECK(v == -1.5);

  Rng d(1234);
  Matrix big = seeded_gaussian(d, 100000, 1, 0.0, 1.0);
  double mean = 0.0;
  for (double v : big.values) mean += v;
  mean /= big.values.size();
  double var = 0.0;
  for (double v : big.values) var += (v - mean) * (v - mean);
  var /= big.values.size();
  CHECK(std::abs(mean) <= 0.02);
  CHECK(std::abs(std::sqrt(var) - 1.0) <= 0.02);

  CHECK_THROWS_AS(seeded_gaussian(d, 2, 2, 0.0, -1.0), std::invalid_argument);
}

TEST_CASE("rng stream matches the pinned golden file") {
  std::ifstream is(FMD_RNG_GOLDEN_PATH);
  REQUIRE_MESSAGE(bool(is), "golden file missing: " FMD_RNG_GOLDEN_PATH);
  Rng rng(42);
  std::string line;
  int count = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const double expected = std::strtod(line.c_str(), nullptr);
    CHECK(rng.uniform() == expected);
    ++count;
  }
  CHECK(count == 64);
}

TEST_CASE("golden file lines carry 17 significant digits") {
  std::ifstream is(FMD_RNG_GOLDEN_PATH);
  REQUIRE(bool(is));
  std::string line;
  std::getline(is, line);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", std::strtod(line.c_str(), nullptr));
  CHECK(line == buf);
}

TEST_CASE("serial and openmp backends produce bit-identical results") {
  Rng rng(6);
  const KernelBackend saved = kernel_backend();
  for (int trial = 0; trial < 8; ++trial) {
    const int m = 1 + rng.uniform_int(24), k = 1 + rng.uniform_int(24),
              n = 1 + rng.uniform_int(24);
    Matrix a = random_matrix(rng, m, k);
    Matrix b = random_matrix(rng, k, n);
    Matrix bt = random_matrix(rng, n, k);
    std::vector<double> gain(k, 1.0);

    set_kernel_backend(KernelBackend::serial);
    Matrix p_s = matmul(a, b);
    Matrix nt_s = matmul_nt(a, bt);
    Matrix sm_s = softmax_rows(a);
    Matrix rn_s = rms_norm_rows(a, gain, 1e-5);
    Matrix add_s = a;
    add_inplace(add_s, rn_s);
    Matrix silu_s = a, up = rn_s;
    silu_mul_inplace(silu_s, up);

    set_kernel_backend(KernelBackend::openmp);
    Matrix p_o = matmul(a, b);
    Matrix nt_o = matmul_nt(a, bt);
    Matrix sm_o = softmax_rows(a);
    Matrix rn_o = rms_norm_rows(a, gain, 1e-5);
    Matrix add_o = a;
    add_inplace(add_o, rn_o);
    Matrix silu_o = a;
    silu_mul_inplace(silu_o, up);

    CHECK(p_s == p_o);
    CHECK(nt_s == nt_o);
    CHECK(sm_s == sm_o);
    CHECK(rn_s == rn_o);
    CHECK(add_s == add_o);
    CHECK(silu_s == silu_o);
  }
  set_kernel_backend(saved);
}

TEST_CASE("public tensor operations keep values finite") {
  Rng rng(7);
  Matrix a = random_matrix(rng, 6, 6, -50.0, 50.0);
  CHECK(matmul(a, a).all_finite());
  CHECK(softmax_rows(a).all_finite());
  CHECK(rms_norm_rows(a, std::vector<double>(6, 1.0), 1e-5).all_finite());
  Rng g(8);
  CHECK(seeded_gaussian(g, 16, 16, 0.0, 3.0).all_finite());
}
