#pragma once

#include <optional>
#include <utility>

#include "vif/errors.hpp"
#include "vif/matrix.hpp"

namespace vif {

// Symmetric PSD N x N kernel matrix, already carrying the 1/N data scaling.
// The eigendecomposition is computed once on demand and cached; every
// stopping-rule quantity is derived from that spectrum.
class KernelMatrix {
 public:
  KernelMatrix() = default;
  explicit KernelMatrix(Matrix m) : m_(std::move(m)) {
    detail::check_symmetric(m_, "KernelMatrix");
  }

  const Matrix& matrix() const { return m_; }
  std::size_t size() const { return m_.rows(); }

  const EigenDecomposition& eig() const {
    if (!eig_) {
      eig_ = sym_eig(m_);
      const double lmax = eig_->values.empty() ? 0.0 : std::max(eig_->values.front(), 0.0);
      const double tol = 1e-8 * std::max(1.0, lmax);
      for (const double lam : eig_->values)
        if (lam < -tol) throw NotPsdError("KernelMatrix: negative eigenvalue");
    }
    return *eig_;
  }

  // Eigenvalues with small negatives clamped to zero.
  std::vector<double> eigenvalues() const {
    std::vector<double> v = eig().values;
    for (double& lam : v) lam = std::max(lam, 0.0);
    return v;
  }

  double trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < m_.rows(); ++i) t += m_(i, i);
    return t;
  }

 private:
  Matrix m_;
  mutable std::optional<EigenDecomposition> eig_;
};

}  // namespace vif
