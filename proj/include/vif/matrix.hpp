#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "vif/errors.hpp"
#include "vif/rng.hpp"

namespace vif {

// Dense row-major matrix of doubles. Small and deliberately minimal: this
// library only needs symmetric eigensolves, Cholesky, and a handful of
// products on matrices up to a couple thousand rows.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_)
      throw InvalidArgumentError("Matrix: entry count does not match rows*cols");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  double max_abs() const {
    double m = 0.0;
    for (const double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (const double v : data_) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (const double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// C = A * B, plain ikj loop (vectorizes well at these sizes).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw InvalidArgumentError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row_ptr(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
  if (a.cols() != x.size()) throw InvalidArgumentError("matvec: dimension mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += ai[j] * x[j];
    y[i] = s;
  }
  return y;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// Eigendecomposition of a symmetric matrix: eigenvalues sorted descending,
// eigenvectors as orthonormal columns of q (q * diag(values) * q^T = A).
struct EigenDecomposition {
  std::vector<double> values;
  Matrix q;
};

namespace detail {

inline void check_symmetric(const Matrix& a, const char* who) {
  if (a.rows() != a.cols()) throw InvalidArgumentError(std::string(who) + ": matrix not square");
  const double tol = 1e-10 * std::max(1.0, a.max_abs());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol)
        throw InvalidArgumentError(std::string(who) + ": matrix not symmetric");
}

}  // namespace detail

// Cyclic Jacobi eigensolver. Sweeps row-major over the upper triangle and
// stops when the off-diagonal Frobenius norm drops below 1e-12 * ||A||_F.
// Deterministic: fixed sweep order, eigenvalues sorted descending with stable
// ties, and each eigenvector's largest-magnitude component made positive.
inline EigenDecomposition sym_eig(const Matrix& a_in) {
  detail::check_symmetric(a_in, "sym_eig");
  const std::size_t n = a_in.rows();
  Matrix a = a_in;
  Matrix v = Matrix::identity(n);
  const double total_norm = a.frobenius_norm();

  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * a(i, j) * a(i, j);
    off = std::sqrt(off);
    if (off <= 1e-12 * total_norm || off == 0.0) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(p, k) = a(k, p);
          a(k, q) = s * akp + c * akq;
          a(q, k) = a(k, q);
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenDecomposition e;
  e.values.resize(n);
  e.q = Matrix(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = order[col];
    e.values[col] = a(src, src);
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (std::abs(v(k, src)) > best) {
        best = std::abs(v(k, src));
        arg = k;
      }
    }
    const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) e.q(k, col) = sign * v(k, src);
  }
  return e;
}

// c^T A^+ c for symmetric PSD A, truncating eigenvalues below cutoff*lambda_max.
// An eigenvalue below -cutoff*lambda_max means the input is not PSD.
inline double quad_form_pinv(const Matrix& a, const std::vector<double>& c,
                             double cutoff = 1e-10) {
  if (a.rows() != c.size()) throw InvalidArgumentError("quad_form_pinv: dimension mismatch");
  if (!(cutoff > 0.0 && cutoff < 1.0))
    throw InvalidArgumentError("quad_form_pinv: cutoff must lie in (0, 1)");
  const EigenDecomposition e = sym_eig(a);
  const double lambda_max = e.values.empty() ? 0.0 : e.values.front();
  const double floor = cutoff * lambda_max;
  double result = 0.0;
  for (std::size_t k = 0; k < e.values.size(); ++k) {
    const double lam = e.values[k];
    if (lam < -floor) throw NotPsdError("quad_form_pinv: matrix has a negative eigenvalue");
    if (lam <= floor || lam <= 0.0) continue;
    double proj = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) proj += e.q(i, k) * c[i];
    result += proj * proj / lam;
  }
  return result;
}

// Lower-triangular Cholesky factor; returns false if the matrix is not
// positive definite (within a small pivot tolerance).
inline bool cholesky(const Matrix& a, Matrix& l) {
  const std::size_t n = a.rows();
  l = Matrix(n, n);
  const double tol = 1e-12 * std::max(1.0, a.max_abs());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s < tol) return false;
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return true;
}

// Draw n rows from N(mean, cov). Uses Cholesky when cov is positive definite
// and an eigenvalue square root otherwise (rank-deficient PSD cov is fine);
// an indefinite cov is rejected.
inline Matrix mvn_sample(const std::vector<double>& mean, const Matrix& cov, std::size_t n,
                         RngStream& rng) {
  const std::size_t p = mean.size();
  if (cov.rows() != p || cov.cols() != p)
    throw InvalidArgumentError("mvn_sample: mean/cov dimension mismatch");
  detail::check_symmetric(cov, "mvn_sample");

  Matrix l;
  if (!cholesky(cov, l)) {
    const EigenDecomposition e = sym_eig(cov);
    const double lmax = e.values.empty() ? 0.0 : std::max(e.values.front(), 0.0);
    const double neg_tol = 1e-8 * std::max(1.0, lmax);
    l = Matrix(p, p);
    for (std::size_t k = 0; k < p; ++k) {
      if (e.values[k] < -neg_tol) throw NotPsdError("mvn_sample: covariance is indefinite");
      const double s = e.values[k] > 0.0 ? std::sqrt(e.values[k]) : 0.0;
      for (std::size_t i = 0; i < p; ++i) l(i, k) = e.q(i, k) * s;
    }
  }

  Matrix x(n, p);
  std::vector<double> z(p);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < p; ++j) z[j] = rng.normal();
    double* row = x.row_ptr(r);
    for (std::size_t i = 0; i < p; ++i) {
      double s = mean[i];
      const double* li = l.row_ptr(i);
      for (std::size_t k = 0; k <= i; ++k) s += li[k] * z[k];
      row[i] = s;
    }
  }
  return x;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Unbiased sample variance (n-1 divisor); 0 for fewer than two points.
inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace vif
