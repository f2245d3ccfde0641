#include "metammf/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace metammf {

namespace {

void require_length(std::span<const double> v, std::size_t expected, const char* what, const std::string& against) {
  if (v.size() != expected) {
    throw DimensionError(std::string(what) + ": vector of length " + std::to_string(v.size()) +
                         " does not match " + against);
  }
}

void require_same_shape(const Matrix& g, std::size_t rows, std::size_t cols, const char* what) {
  if (g.rows != rows || g.cols != cols) {
    throw DimensionError(std::string(what) + ": upstream gradient " + g.shape() + " vs expected " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape() const { return std::to_string(rows) + "x" + std::to_string(cols); }

std::string FusionTensor::shape() const {
  return std::to_string(p) + "x" + std::to_string(q) + "x" + std::to_string(z);
}

void CpTensor::validate() const {
  if (a.cols == 0 || b.cols != a.cols || c.cols != a.cols) {
    throw DimensionError("cp tensor: factor ranks disagree (" + a.shape() + ", " + b.shape() + ", " + c.shape() + ")");
  }
}

std::string CpTensor::shape() const {
  return std::to_string(p()) + "x" + std::to_string(q()) + "x" + std::to_string(z()) + " rank " +
         std::to_string(rank());
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("dot: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  require_length(x, m.cols, "matvec", "matrix " + m.shape());
  Vector y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
  require_length(x, m.rows, "matvec_transposed", "matrix " + m.shape());
  Vector y(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
  return y;
}

void add_outer(Matrix& m, std::span<const double> u, std::span<const double> v, double scale) {
  require_length(u, m.rows, "add_outer", "matrix " + m.shape());
  require_length(v, m.cols, "add_outer", "matrix " + m.shape());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double ur = scale * u[r];
    if (ur == 0.0) continue;
    double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += ur * v[c];
  }
}

Matrix mode3_contract(const FusionTensor& t, std::span<const double> s) {
  require_length(s, t.z, "mode3_contract", "tensor " + t.shape());
  Matrix out(t.p, t.q);
  const std::size_t n = t.p * t.q;
  for (std::size_t k = 0; k < t.z; ++k) {
    const double sk = s[k];
    const double* slice = t.data.data() + k * n;
    for (std::size_t e = 0; e < n; ++e) out.data[e] += slice[e] * sk;
  }
  return out;
}

Matrix cp_contract(const CpTensor& t, std::span<const double> s) {
  t.validate();
  require_length(s, t.z(), "cp_contract", "tensor " + t.shape());
  const std::size_t rank = t.rank();
  const Vector w = matvec_transposed(t.c, s);
  Matrix out(t.p(), t.q());
  for (std::size_t i = 0; i < t.p(); ++i) {
    double* row = out.data.data() + i * out.cols;
    for (std::size_t r = 0; r < rank; ++r) {
      const double coeff = t.a(i, r) * w[r];
      if (coeff == 0.0) continue;
      for (std::size_t j = 0; j < t.q(); ++j) row[j] += coeff * t.b(j, r);
    }
  }
  return out;
}

FusionTensor materialize(const CpTensor& t) {
  t.validate();
  FusionTensor out(t.p(), t.q(), t.z());
  for (std::size_t k = 0; k < t.z(); ++k) {
    for (std::size_t i = 0; i < t.p(); ++i) {
      for (std::size_t j = 0; j < t.q(); ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < t.rank(); ++r) acc += t.a(i, r) * t.b(j, r) * t.c(k, r);
        out(i, j, k) = acc;
      }
    }
  }
  return out;
}

Mode3Gradient mode3_contract_backward(const FusionTensor& t, std::span<const double> s, const Matrix& g) {
  require_length(s, t.z, "mode3_contract_backward", "tensor " + t.shape());
  require_same_shape(g, t.p, t.q, "mode3_contract_backward");
  Mode3Gradient out{FusionTensor(t.p, t.q, t.z), Vector(t.z, 0.0)};
  const std::size_t n = t.p * t.q;
  for (std::size_t k = 0; k < t.z; ++k) {
    const double* slice = t.data.data() + k * n;
    double* grad_slice = out.tensor.data.data() + k * n;
    double acc = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      grad_slice[e] = g.data[e] * s[k];
      acc += g.data[e] * slice[e];
    }
    out.meta[k] = acc;
  }
  return out;
}

CpGradient cp_contract_backward(const CpTensor& t, std::span<const double> s, const Matrix& g) {
  t.validate();
  require_length(s, t.z(), "cp_contract_backward", "tensor " + t.shape());
  require_same_shape(g, t.p(), t.q(), "cp_contract_backward");
  const std::size_t rank = t.rank();
  const Vector w = matvec_transposed(t.c, s);

  // gb_mat = g B (p x rank), gta = g^T A (q x rank)
  Matrix g_b(t.p(), rank);
  Matrix gt_a(t.q(), rank);
  for (std::size_t i = 0; i < t.p(); ++i) {
    for (std::size_t j = 0; j < t.q(); ++j) {
      const double gij = g(i, j);
      if (gij == 0.0) continue;
      for (std::size_t r = 0; r < rank; ++r) {
        g_b(i, r) += gij * t.b(j, r);
        gt_a(j, r) += gij * t.a(i, r);
      }
    }
  }

  CpGradient out{Matrix(t.p(), rank), Matrix(t.q(), rank), Matrix(t.z(), rank), Vector(t.z(), 0.0)};
  Vector h(rank, 0.0);  // h_r = a_r^T g b_r
  for (std::size_t r = 0; r < rank; ++r) {
    for (std::size_t i = 0; i < t.p(); ++i) h[r] += t.a(i, r) * g_b(i, r);
  }
  for (std::size_t i = 0; i < t.p(); ++i) {
    for (std::size_t r = 0; r < rank; ++r) out.a(i, r) = g_b(i, r) * w[r];
  }
  for (std::size_t j = 0; j < t.q(); ++j) {
    for (std::size_t r = 0; r < rank; ++r) out.b(j, r) = gt_a(j, r) * w[r];
  }
  for (std::size_t k = 0; k < t.z(); ++k) {
    for (std::size_t r = 0; r < rank; ++r) out.c(k, r) = s[k] * h[r];
  }
  out.meta = matvec(t.c, h);
  return out;
}

Vector mode3_apply(const FusionTensor& t, std::span<const double> s, std::span<const double> x) {
  require_length(s, t.z, "mode3_apply", "tensor " + t.shape());
  require_length(x, t.q, "mode3_apply", "tensor " + t.shape());
  Vector y(t.p, 0.0);
  for (std::size_t k = 0; k < t.z; ++k) {
    const double sk = s[k];
    if (sk == 0.0) continue;
    const double* slice = t.data.data() + k * t.p * t.q;
    for (std::size_t i = 0; i < t.p; ++i) {
      const double* row = slice + i * t.q;
      double acc = 0.0;
      for (std::size_t j = 0; j < t.q; ++j) acc += row[j] * x[j];
      y[i] += sk * acc;
    }
  }
  return y;
}

Vector cp_apply(const CpTensor& t, std::span<const double> s, std::span<const double> x) {
  t.validate();
  require_length(s, t.z(), "cp_apply", "tensor " + t.shape());
  require_length(x, t.q(), "cp_apply", "tensor " + t.shape());
  const Vector w = matvec_transposed(t.c, s);
  Vector v = matvec_transposed(t.b, x);
  for (std::size_t r = 0; r < v.size(); ++r) v[r] *= w[r];
  return matvec(t.a, v);
}

void mode3_apply_backward(const FusionTensor& t, std::span<const double> s, std::span<const double> x,
                          std::span<const double> gy, FusionTensor& grad_t, std::span<double> grad_s,
                          std::span<double> grad_x) {
  require_length(s, t.z, "mode3_apply_backward", "tensor " + t.shape());
  require_length(x, t.q, "mode3_apply_backward", "tensor " + t.shape());
  require_length(gy, t.p, "mode3_apply_backward", "tensor " + t.shape());
  if (grad_t.p != t.p || grad_t.q != t.q || grad_t.z != t.z) {
    throw DimensionError("mode3_apply_backward: gradient tensor " + grad_t.shape() + " vs " + t.shape());
  }
  require_length(grad_s, t.z, "mode3_apply_backward", "tensor " + t.shape());
  require_length(grad_x, t.q, "mode3_apply_backward", "tensor " + t.shape());
  for (std::size_t k = 0; k < t.z; ++k) {
    const double sk = s[k];
    const double* slice = t.data.data() + k * t.p * t.q;
    double* grad_slice = grad_t.data.data() + k * t.p * t.q;
    double gs = 0.0;
    for (std::size_t i = 0; i < t.p; ++i) {
      const double gi = gy[i];
      if (gi == 0.0) continue;
      const double* row = slice + i * t.q;
      double* grad_row = grad_slice + i * t.q;
      const double scaled = gi * sk;
      double acc = 0.0;
      for (std::size_t j = 0; j < t.q; ++j) {
        grad_row[j] += scaled * x[j];
        acc += row[j] * x[j];
        grad_x[j] += scaled * row[j];
      }
      gs += gi * acc;
    }
    grad_s[k] += gs;
  }
}

void cp_apply_backward(const CpTensor& t, std::span<const double> s, std::span<const double> x,
                       std::span<const double> gy, CpTensor& grad_t, std::span<double> grad_s,
                       std::span<double> grad_x) {
  t.validate();
  require_length(s, t.z(), "cp_apply_backward", "tensor " + t.shape());
  require_length(x, t.q(), "cp_apply_backward", "tensor " + t.shape());
  require_length(gy, t.p(), "cp_apply_backward", "tensor " + t.shape());
  if (grad_t.a.rows != t.a.rows || grad_t.a.cols != t.a.cols || grad_t.b.rows != t.b.rows ||
      grad_t.c.rows != t.c.rows || grad_t.b.cols != t.b.cols || grad_t.c.cols != t.c.cols) {
    throw DimensionError("cp_apply_backward: gradient factors " + grad_t.shape() + " vs " + t.shape());
  }
  require_length(grad_s, t.z(), "cp_apply_backward", "tensor " + t.shape());
  require_length(grad_x, t.q(), "cp_apply_backward", "tensor " + t.shape());

  const std::size_t rank = t.rank();
  const Vector w = matvec_transposed(t.c, s);
  const Vector u = matvec_transposed(t.b, x);
  Vector v(rank);
  for (std::size_t r = 0; r < rank; ++r) v[r] = w[r] * u[r];

  add_outer(grad_t.a, gy, v);
  const Vector gv = matvec_transposed(t.a, gy);
  Vector gw(rank), gu(rank);
  for (std::size_t r = 0; r < rank; ++r) {
    gw[r] = gv[r] * u[r];
    gu[r] = gv[r] * w[r];
  }
  add_outer(grad_t.b, x, gu);
  add_outer(grad_t.c, s, gw);
  const Vector dx = matvec(t.b, gu);
  for (std::size_t j = 0; j < dx.size(); ++j) grad_x[j] += dx[j];
  const Vector ds = matvec(t.c, gw);
  for (std::size_t k = 0; k < ds.size(); ++k) grad_s[k] += ds[k];
}

double finite_diff_check(const ScalarFunction& f, std::span<const double> x0, std::span<const double> analytic,
                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (analytic.size() != x0.size()) {
    throw DimensionError("finite_diff_check: gradient length " + std::to_string(analytic.size()) +
                         " vs parameter length " + std::to_string(x0.size()));
  }
  Vector x(x0.begin(), x0.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + step;
    const double up = f(x);
    x[k] = saved - step;
    const double down = f(x);
    x[k] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite function value at coordinate " + std::to_string(k));
    }
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(analytic[k]));
    worst = std::max(worst, err);
  }
  return worst;
}

void require_finite(std::span<const double> values, const std::string& what) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) {
      throw NumericError(what + ": non-finite value at index " + std::to_string(k));
    }
  }
}

}  // namespace metammf
