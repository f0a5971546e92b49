#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "maximin/core_linalg.hpp"
#include "maximin/errors.hpp"

namespace maximin {

struct SimplexWeight {
  VectorXd weights;
  double delta = 0.0;
  double objective = 0.0;    // weights^T (A + delta I)_+ weights
  bool approximate = false;  // projected-gradient fallback was used
};

struct MaximinEffect {
  VectorXd beta;
  SimplexWeight weight;
  double reward = std::numeric_limits<double>::quiet_NaN();  // NaN when no covariance was supplied
};

namespace detail {

inline void clamp_to_simplex(VectorXd& g) {
  for (Index j = 0; j < g.size(); ++j)
    if (g[j] < 0.0) g[j] = 0.0;
  const double s = g.sum();
  if (s <= 0.0) throw NumericError("simplex weight collapsed to zero");
  g /= s;
}

/// Euclidean projection onto the probability simplex (sort-based).
inline VectorXd project_simplex(const VectorXd& v) {
  const Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (Index i = 0; i < n; ++i) {
    cum += u[static_cast<std::size_t>(i)];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

/// Exact minimizer of g^T Q g over the simplex by enumerating supports.
inline VectorXd simplex_enumerate(const MatrixXd& q_in) {
  const Index L = q_in.rows();
  // Rescaling leaves the minimizer unchanged and keeps the KKT systems balanced.
  const double qmax = q_in.cwiseAbs().maxCoeff();
  const MatrixXd q = qmax > 0.0 ? MatrixXd(q_in / qmax) : q_in;
  const double tie = 1e-12;
  VectorXd best;
  double best_obj = std::numeric_limits<double>::infinity();
  double best_norm = std::numeric_limits<double>::infinity();
  const unsigned count = 1u << static_cast<unsigned>(L);
  std::vector<Index> idx;
  for (unsigned mask = 1; mask < count; ++mask) {
    idx.clear();
    for (Index j = 0; j < L; ++j)
      if (mask & (1u << static_cast<unsigned>(j))) idx.push_back(j);
    const Index s = static_cast<Index>(idx.size());
    MatrixXd kkt = MatrixXd::Zero(s + 1, s + 1);
    kkt.topLeftCorner(s, s) = q(idx, idx);
    kkt.block(0, s, s, 1).setOnes();
    kkt.block(s, 0, 1, s).setOnes();
    VectorXd rhs = VectorXd::Zero(s + 1);
    rhs[s] = 1.0;
    const VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    if ((kkt * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-9) continue;
    VectorXd g = VectorXd::Zero(L);
    bool feasible = true;
    for (Index i = 0; i < s; ++i) {
      if (sol[i] < -1e-12) {
        feasible = false;
        break;
      }
      g[idx[static_cast<std::size_t>(i)]] = sol[i];
    }
    if (!feasible) continue;
    const double obj = g.dot(q * g);
    const double nrm = g.squaredNorm();
    if (obj < best_obj - tie || (obj <= best_obj + tie && nrm < best_norm - 1e-14)) {
      best = g;
      best_obj = obj;
      best_norm = nrm;
    }
  }
  if (best.size() == 0) throw NumericError("min_quadratic_simplex: no feasible support found");
  return best;
}

/// Accelerated projected gradient for large L.
inline VectorXd simplex_projected_gradient(const MatrixXd& q, double tol = 1e-10, int max_iter = 100000) {
  const Index L = q.rows();
  const double lmax = std::max(eigen_sym(SymMatrix(q)).eigenvalues().maxCoeff(), 1e-12);
  const double step = 1.0 / (2.0 * lmax);
  VectorXd x = VectorXd::Constant(L, 1.0 / static_cast<double>(L));
  VectorXd y = x;
  double t = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd xn = project_simplex(y - step * 2.0 * (q * y));
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = xn + ((t - 1.0) / tn) * (xn - x);
    const double change = (xn - x).lpNorm<Eigen::Infinity>();
    x = xn;
    t = tn;
    if (change < tol) break;
  }
  return x;
}

}  // namespace detail

/**
 * Minimizes g^T (A + delta I)_+ g over the probability simplex.
 *
 * For L <= 12 every support is enumerated and its equality-constrained KKT
 * system solved in the minimum-norm sense; among feasible candidates the
 * smallest objective wins, ties going to the smallest ||g||, so a flat
 * objective returns the uniform weight. Larger L uses projected gradient and
 * sets `approximate`.
 */
inline SimplexWeight min_quadratic_simplex(const SymMatrix& a, double delta = 0.0) {
  detail::require(delta >= 0.0 && std::isfinite(delta), "min_quadratic_simplex: delta must be >= 0");
  SymMatrix shifted = a;
  shifted.add_diagonal(delta);
  const SymMatrix q = psd_project(shifted);
  const Index L = q.dim();

  SimplexWeight out;
  out.delta = delta;
  if (L == 1) {
    out.weights = VectorXd::Ones(1);
  } else if (L <= 12) {
    out.weights = detail::simplex_enumerate(q.dense());
  } else {
    out.weights = detail::simplex_projected_gradient(q.dense());
    out.approximate = true;
  }
  detail::clamp_to_simplex(out.weights);
  out.objective = out.weights.dot(q.dense() * out.weights);
  return out;
}

/// min_l 2 b_l^T S beta - beta^T S beta.
inline double reward_exact(const VectorXd& beta, const MatrixXd& b, const SymMatrix& sigma) {
  detail::require(b.rows() == beta.size() && sigma.dim() == beta.size(),
                  "reward_exact: dimension mismatch");
  const VectorXd sb = sigma.dense() * beta;
  const double quad = beta.dot(sb);
  return 2.0 * (b.transpose() * sb).minCoeff() - quad;
}

/// min_l 2 (G g)_l - g^T G g.
inline double reward_estimated(const VectorXd& weights, const SymMatrix& gamma_hat) {
  detail::require(weights.size() == gamma_hat.dim(), "reward_estimated: dimension mismatch");
  const VectorXd gg = gamma_hat.dense() * weights;
  return 2.0 * gg.minCoeff() - weights.dot(gg);
}

inline double reward_estimated(const SimplexWeight& w, const SymMatrix& gamma_hat) {
  return reward_estimated(w.weights, gamma_hat);
}

inline MaximinEffect maximin_effect(const MatrixXd& b, const SimplexWeight& weight,
                                    const SymMatrix* sigma = nullptr) {
  detail::require(b.cols() == weight.weights.size(), "maximin_effect: B has wrong column count");
  MaximinEffect e;
  e.weight = weight;
  e.beta = b * weight.weights;
  if (sigma != nullptr) e.reward = reward_exact(e.beta, b, *sigma);
  return e;
}

/// Regression covariance B^T S B.
inline SymMatrix regression_covariance(const MatrixXd& b, const SymMatrix& sigma) {
  detail::require(b.rows() == sigma.dim(), "regression_covariance: dimension mismatch");
  return SymMatrix(MatrixXd(b.transpose() * sigma.dense() * b));
}

/// Maximin aggregation of per-group least-squares fits.
inline MaximinEffect magging(const MatrixXd& b_ols, const SymMatrix& sigma_hat) {
  const SymMatrix g = regression_covariance(b_ols, sigma_hat);
  return maximin_effect(b_ols, min_quadratic_simplex(g, 0.0), &sigma_hat);
}

/// Unit direction maximizing min_l beta^T b_l.
inline VectorXd maximin_projection(const MatrixXd& b) {
  detail::require(b.cols() >= 1 && b.rows() >= 1, "maximin_projection: empty coefficient matrix");
  const SymMatrix g(MatrixXd(b.transpose() * b));
  const VectorXd beta = b * min_quadratic_simplex(g, 0.0).weights;
  const double nrm = beta.norm();
  const double ref = b.colwise().norm().maxCoeff();
  if (!(nrm > 1e-12 * std::max(ref, 1e-300))) {
    throw NumericError("maximin_projection: maximin effect is zero, direction undefined");
  }
  return beta / nrm;
}

}  // namespace maximin
