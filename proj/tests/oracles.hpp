#pragma once

// Independent reference implementations used only by the tests. None of these
// call into the library's solvers.

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <cmath>
#include <limits>
#include <vector>

#include "maximin/core_linalg.hpp"
#include "maximin/rng.hpp"

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(Index r, Index c, maximin::RngStream& rng) {
  MatrixXd a(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) a(i, j) = rng.normal();
  return a;
}

inline VectorXd random_vector(Index n, maximin::RngStream& rng) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

inline MatrixXd random_symmetric(Index n, maximin::RngStream& rng, double scale = 1.0) {
  const MatrixXd a = random_matrix(n, n, rng);
  return scale * 0.5 * (a + a.transpose());
}

/// Random PSD matrix G G^T / n with rank `rank` (full rank by default).
inline MatrixXd random_psd(Index n, maximin::RngStream& rng, Index rank = -1) {
  if (rank < 0) rank = n;
  const MatrixXd g = random_matrix(n, rank, rng);
  return g * g.transpose() / static_cast<double>(n);
}

/// Cyclic Jacobi eigenvalue iteration. Returns eigenvalues (unsorted) and
/// eigenvectors as columns.
inline std::pair<VectorXd, MatrixXd> jacobi_eigen(MatrixXd a, int max_sweeps = 100) {
  const Index n = a.rows();
  MatrixXd v = MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  return {a.diagonal(), v};
}

inline MatrixXd jacobi_psd_clamp(const MatrixXd& a) {
  const auto [lam, v] = jacobi_eigen(a);
  return v * lam.cwiseMax(0.0).asDiagonal() * v.transpose();
}

/// FISTA on ||y - Xb||^2/(2n) + lambda * sum_j w_j |b_j| with w_j = ||X_j||/sqrt(n).
inline VectorXd prox_grad_lasso(const MatrixXd& x, const VectorXd& y, double lambda, double tol = 1e-12,
                                int max_iter = 200000) {
  const double n = static_cast<double>(x.rows());
  VectorXd w(x.cols());
  for (Index j = 0; j < x.cols(); ++j) w[j] = x.col(j).norm() / std::sqrt(n);
  const MatrixXd g = x.transpose() * x / n;
  const VectorXd xy = x.transpose() * y / n;
  const double lip = std::max(jacobi_eigen(g).first.maxCoeff(), 1e-12);
  const double step = 1.0 / lip;
  VectorXd b = VectorXd::Zero(x.cols()), z = b;
  double t = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd grad = g * z - xy;
    VectorXd bn = z - step * grad;
    for (Index j = 0; j < bn.size(); ++j) {
      const double thr = step * lambda * w[j];
      bn[j] = bn[j] > thr ? bn[j] - thr : (bn[j] < -thr ? bn[j] + thr : 0.0);
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = bn + ((t - 1.0) / tn) * (bn - b);
    const double change = (bn - b).lpNorm<Eigen::Infinity>();
    b = bn;
    t = tn;
    if (change < tol) break;
  }
  return b;
}

inline double lasso_objective(const MatrixXd& x, const VectorXd& y, const VectorXd& b, double lambda) {
  const double n = static_cast<double>(x.rows());
  double pen = 0.0;
  for (Index j = 0; j < x.cols(); ++j) pen += x.col(j).norm() / std::sqrt(n) * std::abs(b[j]);
  return (y - x * b).squaredNorm() / (2.0 * n) + lambda * pen;
}

/**
 * Primal oracle for min u'Su s.t. |A u - c| <= r (elementwise) by ADMM on the
 * splitting z = A u. Converges slowly but needs nothing beyond linear solves.
 */
inline VectorXd admm_box_qp(const MatrixXd& s, const MatrixXd& a, const VectorXd& c, const VectorXd& r,
                            int iters = 200000, double rho = 1.0, double tol = 1e-10) {
  const Index p = s.cols();
  const Index m = a.rows();
  const MatrixXd k = 2.0 * s + rho * a.transpose() * a + 1e-12 * MatrixXd::Identity(p, p);
  const Eigen::LDLT<MatrixXd> solver(k);
  VectorXd u = VectorXd::Zero(p), z = c, w = VectorXd::Zero(m);
  for (int it = 0; it < iters; ++it) {
    u = solver.solve(rho * a.transpose() * (z - w));
    const VectorXd au = a * u;
    VectorXd zn = au + w;
    for (Index i = 0; i < m; ++i) zn[i] = std::clamp(zn[i], c[i] - r[i], c[i] + r[i]);
    const double dual = rho * (zn - z).norm();
    z = zn;
    w += au - z;
    const double primal = (au - z).norm();
    if (primal < tol && dual < tol) break;
  }
  return u;
}

/// Minimum of g'Qg over the simplex grid with spacing 1/steps. The last free
/// coordinate is minimized exactly over its integer grid (the objective is a
/// convex quadratic along that line), so the result equals the brute-force
/// grid minimum while costing one dimension less.
inline double simplex_grid_min(const MatrixXd& q, int steps) {
  const Index L = q.rows();
  if (L == 1) return q(0, 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> k(static_cast<std::size_t>(L), 0);
  const double h = 1.0 / steps;
  // Enumerate the first L-2 coordinates; the last two share the remainder:
  // g = g0 + t dir with g0 = base + left*h e_{L-1}, dir = e_{L-2} - e_{L-1}.
  VectorXd dir = VectorXd::Zero(L);
  dir[L - 2] = 1.0;
  dir[L - 1] = -1.0;
  const VectorXd qdir = q * dir;
  const double a2 = dir.dot(qdir);
  VectorXd g0(L), qg0(L);
  std::function<void(Index, int)> rec = [&](Index pos, int left) {
    if (pos == L - 2) {
      g0.setZero();
      for (Index i = 0; i < L - 2; ++i) g0[i] = k[static_cast<std::size_t>(i)] * h;
      g0[L - 1] = left * h;
      qg0.noalias() = q * g0;
      const double a0 = g0.dot(qg0);
      const double a1 = 2.0 * qdir.dot(g0);
      auto f = [&](int c) {
        const double t = c * h;
        return a0 + a1 * t + a2 * t * t;
      };
      best = std::min({best, f(0), f(left)});
      if (a2 > 0.0) {
        const double tstar = std::clamp(-a1 / (2.0 * a2) / h, -1.0, left + 1.0);
        for (int c : {static_cast<int>(std::floor(tstar)), static_cast<int>(std::ceil(tstar))})
          if (c >= 0 && c <= left) best = std::min(best, f(c));
      }
      return;
    }
    for (int v = 0; v <= left; ++v) {
      k[static_cast<std::size_t>(pos)] = v;
      rec(pos + 1, left - v);
    }
  };
  rec(0, steps);
  return best;
}

/// Closed-form ridge weight for L = 2 (clamped to [0, 1]); uniform on a flat objective.
inline double two_group_weight(const MatrixXd& g, double delta) {
  const double den = g(0, 0) + g(1, 1) + 2.0 * delta - 2.0 * g(0, 1);
  if (den <= 0.0) return 0.5;
  return std::clamp((g(1, 1) + delta - g(0, 1)) / den, 0.0, 1.0);
}

/// min over simplex vertices of a linear function c'g.
inline double vertex_min(const VectorXd& c) { return c.minCoeff(); }

/// Best min_l beta'b_l over random unit vectors.
inline double random_search_maxmin(const MatrixXd& b, int trials, maximin::RngStream& rng) {
  double best = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    VectorXd v = random_vector(b.rows(), rng);
    v.normalize();
    best = std::max(best, (b.transpose() * v).minCoeff());
  }
  return best;
}

/// P(|Z_i| <= c for all i) for d independent standard normals.
inline double orthant_probability(double c, int d) {
  const double inside = std::erf(c / std::sqrt(2.0));
  return std::pow(inside, d);
}

}  // namespace oracle
