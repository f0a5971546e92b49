#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maximin/errors.hpp"
#include "maximin/rng.hpp"

namespace maximin {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/**
 * Dense symmetric matrix. Every write mirrors across the diagonal, so
 * (i, j) and (j, i) always hold the same bits.
 */
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Index dim) : m_(MatrixXd::Zero(dim, dim)) {
    detail::require(dim >= 1, "SymMatrix: dimension must be >= 1");
  }

  /// Accepts a square matrix and symmetrizes it as (A + A^T) / 2.
  explicit SymMatrix(const MatrixXd& a) {
    detail::require(a.rows() == a.cols() && a.rows() >= 1,
                    "SymMatrix: input must be square and non-empty");
    m_ = 0.5 * (a + a.transpose());
  }

  static SymMatrix identity(Index dim) {
    SymMatrix s(dim);
    s.m_.diagonal().setOnes();
    return s;
  }

  Index dim() const { return m_.rows(); }
  double operator()(Index i, Index j) const { return m_(i, j); }

  void set(Index i, Index j, double v) {
    m_(i, j) = v;
    m_(j, i) = v;
  }

  const MatrixXd& dense() const { return m_; }

  SymMatrix& operator+=(const SymMatrix& o) {
    detail::require(o.dim() == dim(), "SymMatrix: dimension mismatch");
    m_ += o.m_;
    return *this;
  }
  SymMatrix& operator-=(const SymMatrix& o) {
    detail::require(o.dim() == dim(), "SymMatrix: dimension mismatch");
    m_ -= o.m_;
    return *this;
  }
  SymMatrix& operator*=(double c) {
    m_ *= c;
    return *this;
  }
  SymMatrix& add_diagonal(double c) {
    m_.diagonal().array() += c;
    return *this;
  }

  friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
  friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
  friend SymMatrix operator*(double c, SymMatrix a) { return a *= c; }

  bool operator==(const SymMatrix& o) const { return m_ == o.m_; }

 private:
  MatrixXd m_;
};

// ---------------------------------------------------------------------------
// Lower-triangle vectorization.
//
// Entry (l, k) with k <= l (1-based) lives at position
//   pi(l, k) = (2L - k)(k - 1)/2 + l,
// i.e. columns of the lower triangle are stacked left to right.
// ---------------------------------------------------------------------------

inline Index vecl_length(Index L) { return L * (L + 1) / 2; }

/// 1-based index map; requires 1 <= k <= l <= L.
inline Index pi_index(Index l, Index k, Index L) {
  if (!(1 <= k && k <= l && l <= L)) {
    throw ContractError("pi_index: need 1 <= k <= l <= L, got l=" + std::to_string(l) +
                        " k=" + std::to_string(k) + " L=" + std::to_string(L));
  }
  return (2 * L - k) * (k - 1) / 2 + l;
}

/// 0-based position for any ordered pair (order of l and k is irrelevant).
inline Index vecl_pos(Index l, Index k, Index L) {
  if (l < k) std::swap(l, k);
  return pi_index(l + 1, k + 1, L) - 1;
}

/// Inverse of vecl_pos: the 0-based (row, col) pair with row >= col.
inline std::pair<Index, Index> vecl_pair(Index pos, Index L) {
  for (Index k = 0; k < L; ++k) {
    const Index first = vecl_pos(k, k, L);
    if (pos < first + (L - k)) return {k + (pos - first), k};
  }
  throw ContractError("vecl_pair: position out of range");
}

/// Vector of length L(L+1)/2 holding a lower triangle in vecl order.
class VeclVector {
 public:
  VeclVector() = default;

  VeclVector(Index L, VectorXd values) : L_(L), values_(std::move(values)) {
    detail::require(L >= 1, "VeclVector: L must be >= 1");
    detail::require(values_.size() == vecl_length(L),
                    "VeclVector: length must be L(L+1)/2");
  }

  /// Infers L from the length; rejects lengths not of the form L(L+1)/2.
  static VeclVector from_values(const VectorXd& values) {
    const Index n = values.size();
    Index L = 0;
    while (vecl_length(L) < n) ++L;
    if (n == 0 || vecl_length(L) != n) {
      throw ContractError("VeclVector: length " + std::to_string(n) +
                          " is not of the form L(L+1)/2");
    }
    return VeclVector(L, values);
  }

  Index groups() const { return L_; }
  Index size() const { return values_.size(); }
  const VectorXd& values() const { return values_; }
  double operator[](Index i) const { return values_[i]; }
  double at(Index l, Index k) const { return values_[vecl_pos(l, k, L_)]; }

 private:
  Index L_ = 0;
  VectorXd values_;
};

inline VeclVector vecl(const SymMatrix& a) {
  const Index L = a.dim();
  VectorXd v(vecl_length(L));
  Index pos = 0;
  for (Index k = 0; k < L; ++k)
    for (Index l = k; l < L; ++l) v[pos++] = a(l, k);
  return VeclVector(L, std::move(v));
}

inline SymMatrix unvecl(const VeclVector& v) {
  const Index L = v.groups();
  SymMatrix a(L);
  Index pos = 0;
  for (Index k = 0; k < L; ++k)
    for (Index l = k; l < L; ++l) a.set(l, k, v[pos++]);
  return a;
}

// ---------------------------------------------------------------------------
// Spectral helpers
// ---------------------------------------------------------------------------

inline void check_finite(const MatrixXd& a, const char* who) {
  if (!a.allFinite()) throw NumericError(std::string(who) + ": non-finite entries");
}

inline Eigen::SelfAdjointEigenSolver<MatrixXd> eigen_sym(const SymMatrix& a) {
  check_finite(a.dense(), "eigen_sym");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a.dense());
  if (es.info() != Eigen::Success) throw NumericError("eigen_sym: eigen-solver failed");
  return es;
}

inline double min_eigenvalue(const SymMatrix& a) { return eigen_sym(a).eigenvalues().minCoeff(); }

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues are set to zero.
/// An input that is already PSD is returned unchanged.
inline SymMatrix psd_project(const SymMatrix& a) {
  const auto es = eigen_sym(a);
  const VectorXd& lam = es.eigenvalues();
  if (lam.minCoeff() >= 0.0) return a;
  const MatrixXd& u = es.eigenvectors();
  const VectorXd clamped = lam.cwiseMax(0.0);
  return SymMatrix(MatrixXd(u * clamped.asDiagonal() * u.transpose()));
}

/// Symmetric square root U diag(sqrt(max(lambda, 0))) U^T.
inline MatrixXd sym_sqrt(const SymMatrix& a) {
  const auto es = eigen_sym(a);
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatrixXd& u = es.eigenvectors();
  MatrixXd r = u * root.asDiagonal() * u.transpose();
  return 0.5 * (r + r.transpose());
}

/// Inverse symmetric square root; eigenvalues below `floor` are rejected.
inline MatrixXd sym_inv_sqrt(const SymMatrix& a, double floor = 0.0) {
  const auto es = eigen_sym(a);
  const VectorXd& lam = es.eigenvalues();
  if (lam.minCoeff() <= floor) throw SingularError("sym_inv_sqrt: matrix not positive definite");
  const VectorXd inv_root = lam.cwiseSqrt().cwiseInverse();
  const MatrixXd& u = es.eigenvectors();
  MatrixXd r = u * inv_root.asDiagonal() * u.transpose();
  return 0.5 * (r + r.transpose());
}

// ---------------------------------------------------------------------------
// Multivariate Gaussian sampling
// ---------------------------------------------------------------------------

/// Draws mean + C z with C the symmetric square root of cov (cov PSD).
class MvnSampler {
 public:
  MvnSampler(VectorXd mean, const SymMatrix& cov) : mean_(std::move(mean)) {
    detail::require(cov.dim() == mean_.size(), "mvn_sample: mean/cov dimension mismatch");
    root_ = sym_sqrt(cov);
  }

  Index dim() const { return mean_.size(); }

  VectorXd draw(RngStream& rng) const {
    VectorXd z(dim());
    for (Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return mean_ + root_ * z;
  }

  /// n draws as rows; row i consumes normals [i*p, (i+1)*p) of the stream,
  /// so a smaller n yields a prefix of a larger n.
  MatrixXd draw_rows(Index n, RngStream& rng) const {
    const Index p = dim();
    MatrixXd z(n, p);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < p; ++j) z(i, j) = rng.normal();
    MatrixXd x = z * root_;  // root_ is symmetric
    x.rowwise() += mean_.transpose();
    return x;
  }

  const MatrixXd& root() const { return root_; }

 private:
  VectorXd mean_;
  MatrixXd root_;
};

inline VectorXd mvn_sample(const VectorXd& mean, const SymMatrix& cov, RngStream& rng) {
  return MvnSampler(mean, cov).draw(rng);
}

/// Gram matrix X^T X / n of the rows of X.
inline SymMatrix gram(const MatrixXd& x) {
  detail::require(x.rows() >= 1, "gram: empty design");
  MatrixXd g(x.cols(), x.cols());
  g.setZero();
  g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), 1.0 / static_cast<double>(x.rows()));
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return SymMatrix(g);
}

}  // namespace maximin
