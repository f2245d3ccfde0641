#pragma once

// Dense storage and contraction kernels for the fusion generators.
//
// Matrices are row-major. A FusionTensor of shape p x q x z stores z frontal
// slices back to back, each slice a row-major p x q matrix, so contracting
// along the third mode walks memory slice by slice.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metammf/errors.hpp"

namespace metammf {

using Vector = std::vector<double>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool empty() const { return data.empty(); }
  std::string shape() const;
};

struct FusionTensor {
  std::size_t p = 0;  // output dim
  std::size_t q = 0;  // input dim
  std::size_t z = 0;  // meta dim
  std::vector<double> data;

  FusionTensor() = default;
  FusionTensor(std::size_t p_, std::size_t q_, std::size_t z_, double fill = 0.0)
      : p(p_), q(q_), z(z_), data(p_ * q_ * z_, fill) {}

  double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data[(k * p + i) * q + j]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data[(k * p + i) * q + j]; }

  std::span<const double> slice(std::size_t k) const { return {data.data() + k * p * q, p * q}; }
  std::span<double> slice(std::size_t k) { return {data.data() + k * p * q, p * q}; }

  bool empty() const { return data.empty(); }
  std::string shape() const;
};

// CP factorization: t[p][q][z] = sum_r a[p][r] * b[q][r] * c[z][r].
struct CpTensor {
  Matrix a;  // p x rank
  Matrix b;  // q x rank
  Matrix c;  // z x rank

  CpTensor() = default;
  CpTensor(std::size_t p, std::size_t q, std::size_t z, std::size_t rank)
      : a(p, rank), b(q, rank), c(z, rank) {}

  std::size_t rank() const { return a.cols; }
  std::size_t p() const { return a.rows; }
  std::size_t q() const { return b.rows; }
  std::size_t z() const { return c.rows; }
  std::size_t parameter_count() const { return rank() * (p() + q() + z()); }

  bool empty() const { return a.empty(); }
  // Throws DimensionError unless all factors share one positive rank.
  void validate() const;
  std::string shape() const;
};

double dot(std::span<const double> x, std::span<const double> y);

// y = m x
Vector matvec(const Matrix& m, std::span<const double> x);
// y = m^T x
Vector matvec_transposed(const Matrix& m, std::span<const double> x);
// m += scale * u v^T
void add_outer(Matrix& m, std::span<const double> u, std::span<const double> v, double scale = 1.0);

// result = sum_k t(:, :, k) * s[k]
Matrix mode3_contract(const FusionTensor& t, std::span<const double> s);

// result = A diag(C^T s) B^T, O(rank * (p*q + z)).
Matrix cp_contract(const CpTensor& t, std::span<const double> s);

// Full tensor with entries sum_r a_pr b_qr c_zr.
FusionTensor materialize(const CpTensor& t);

struct Mode3Gradient {
  FusionTensor tensor;
  Vector meta;
};

// Gradients of sum(g .* mode3_contract(t, s)) with respect to t and s.
Mode3Gradient mode3_contract_backward(const FusionTensor& t, std::span<const double> s, const Matrix& g);

struct CpGradient {
  Matrix a;
  Matrix b;
  Matrix c;
  Vector meta;
};

// Gradients of sum(g .* cp_contract(t, s)) with respect to the factors and s.
CpGradient cp_contract_backward(const CpTensor& t, std::span<const double> s, const Matrix& g);

// Matrix-free layer application: returns (t x3 s) x without forming the p x q
// weight. The fusion forward pass uses these; they agree with
// matvec(mode3_contract(t, s), x) up to rounding.
Vector mode3_apply(const FusionTensor& t, std::span<const double> s, std::span<const double> x);
Vector cp_apply(const CpTensor& t, std::span<const double> s, std::span<const double> x);

// Backward of the apply kernels for upstream gradient gy (length p).
// Results are accumulated (+=) into grad_t, grad_s and grad_x.
void mode3_apply_backward(const FusionTensor& t, std::span<const double> s, std::span<const double> x,
                          std::span<const double> gy, FusionTensor& grad_t, std::span<double> grad_s,
                          std::span<double> grad_x);
void cp_apply_backward(const CpTensor& t, std::span<const double> s, std::span<const double> x,
                       std::span<const double> gy, CpTensor& grad_t, std::span<double> grad_s,
                       std::span<double> grad_x);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Compares an analytic gradient against central differences of f at x0.
// Returns max_k |analytic_k - numeric_k| / max(1, |analytic_k|).
// Throws NumericError if f is not finite at a probe point.
double finite_diff_check(const ScalarFunction& f, std::span<const double> x0,
                         std::span<const double> analytic, double step = 1e-5);

// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, const std::string& what);

}  // namespace metammf
