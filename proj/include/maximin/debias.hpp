#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "maximin/core_linalg.hpp"
#include "maximin/errors.hpp"
#include "maximin/lasso.hpp"

namespace maximin {

/**
 * Slack of every constraint of the projection problem, in the units of the
 * caller's loading vector. `slacks[0]` is the loading-direction constraint
 * |l^T (S u - l)| (absent when the loading duplicates a basis vector), the
 * rest are |(S u - l)_j|.
 */
struct FeasibilityReport {
  std::vector<double> slacks;
  double box_bound = 0.0;      // bound for the coordinate constraints
  double loading_bound = 0.0;  // bound for the loading-direction constraint
  bool has_loading_constraint = true;
  // Sup-norm constraint ||X u||_inf <= ||loading|| * tau, verified only.
  std::optional<double> sup_norm;
  double sup_bound = std::numeric_limits<double>::infinity();

  bool sup_norm_ok() const { return !sup_norm || *sup_norm <= sup_bound + 1e-8; }

  bool within_bounds(double tol = 1e-8) const {
    for (std::size_t i = 0; i < slacks.size(); ++i) {
      const bool is_loading = has_loading_constraint && i == 0;
      if (slacks[i] > (is_loading ? loading_bound : box_bound) + tol) return false;
    }
    return true;
  }
};

struct ProjectionDirection {
  VectorXd direction;
  FeasibilityReport feasibility;
  double variance_term = 0.0;  // u^T S u
  double penalty = 0.0;        // normalized penalty actually used
  int escalations = 0;
};

struct FunctionalEstimate {
  double value = 0.0;
  double se = 0.0;
  Index group = 0;
};

struct ProjectionOptions {
  double kkt_tol = 1e-11;
  int max_sweeps = 20000;
  double diverge_objective = -1e10;
  double escalation_factor = 2.0;
  int max_escalations = 30;
  double penalty_floor = 1e-4;  // first penalty tried when the requested one is 0 and fails
};

namespace detail {

struct DualResult {
  bool bounded = false;
  VectorXd u;  // normalized direction
};

/**
 * Coordinate descent on the dual
 *   min_h  h^T G h / 4 + g^T h + mu ||h||_1,   G = H^T S H,  g = H^T l,
 * with H = [l, I] (or I alone when l is a basis vector). Returns
 * u = -H h / 2. Stationarity of the dual is exactly primal feasibility
 * |w^T (S u - l)| <= mu, so iterations stop on the KKT residual.
 */
inline DualResult solve_dual(const MatrixXd& s, const VectorXd& l, bool with_loading, double mu,
                             const ProjectionOptions& opt) {
  const Index p = s.rows();
  const Index off = with_loading ? 1 : 0;
  const Index m = p + off;
  MatrixXd g_mat(m, m);
  VectorXd g(m);
  if (with_loading) {
    const VectorXd sl = s * l;
    g_mat(0, 0) = l.dot(sl);
    g_mat.block(0, 1, 1, p) = sl.transpose();
    g_mat.block(1, 0, p, 1) = sl;
    g_mat.block(1, 1, p, p) = s;
    g[0] = 1.0;
    g.tail(p) = l;
  } else {
    g_mat = s;
    g = l;
  }

  VectorXd h = VectorXd::Zero(m);
  VectorXd q = VectorXd::Zero(m);  // G h
  DualResult res;
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    for (Index j = 0; j < m; ++j) {
      const double gjj = g_mat(j, j);
      const double a = 0.5 * (q[j] - gjj * h[j]) + g[j];
      double nh;
      if (gjj <= 0.0) {
        if (std::abs(a) > mu) return res;  // linear descent direction with no curvature
        nh = 0.0;
      } else {
        nh = -soft_threshold(a, mu) / (0.5 * gjj);
      }
      const double d = nh - h[j];
      if (d != 0.0) {
        q.noalias() += d * g_mat.col(j);
        h[j] = nh;
      }
    }
    // KKT residual of the dual.
    double viol = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double grad = 0.5 * q[j] + g[j];
      if (h[j] == 0.0) {
        viol = std::max(viol, std::abs(grad) - mu);
      } else {
        viol = std::max(viol, std::abs(grad + (h[j] > 0 ? mu : -mu)));
      }
    }
    const double obj = 0.25 * h.dot(q) + g.dot(h) + mu * h.lpNorm<1>();
    if (!std::isfinite(obj) || obj < opt.diverge_objective) return res;
    if (viol <= opt.kkt_tol) {
      res.bounded = true;
      res.u = with_loading ? VectorXd(-0.5 * (h[0] * l + h.tail(p))) : VectorXd(-0.5 * h);
      return res;
    }
  }
  return res;  // no convergence: treated as unbounded at this penalty
}

inline bool is_basis_vector(const VectorXd& l) {
  Index nonzero = 0;
  for (Index j = 0; j < l.size(); ++j)
    if (l[j] != 0.0) ++nonzero;
  return nonzero == 1;
}

}  // namespace detail

/**
 * Minimum-variance projection direction:
 *   min_u u^T S u  s.t.  ||S u - w||_inf <= ||w|| mu,  |w^T S u - ||w||^2| <= ||w||^2 mu.
 * Solved on the normalized loading w/||w|| and rescaled, so the output is
 * exactly linear in w. When the dual is unbounded at the requested penalty,
 * the penalty is escalated geometrically. An optional design X enables the
 * post-hoc check ||X u||_inf <= ||w|| tau.
 */
inline ProjectionDirection solve_projection(const SymMatrix& sigma, const VectorXd& loading, double mu,
                                            double tau = std::numeric_limits<double>::infinity(),
                                            const MatrixXd* design = nullptr,
                                            const ProjectionOptions& opt = {}) {
  const Index p = sigma.dim();
  detail::require(loading.size() == p, "projection: loading/covariance dimension mismatch");
  detail::require(mu >= 0.0 && tau >= 0.0, "projection: mu and tau must be >= 0");
  check_finite(sigma.dense(), "projection");
  const double scale = loading.norm();
  detail::require(scale > 0.0, "projection: loading must be non-zero");
  const VectorXd l = loading / scale;
  const bool with_loading = !detail::is_basis_vector(l);

  double pen = mu;
  int escalations = 0;
  detail::DualResult dual = detail::solve_dual(sigma.dense(), l, with_loading, pen, opt);
  while (!dual.bounded) {
    if (escalations >= opt.max_escalations) {
      std::ostringstream os;
      os << "projection: dual unbounded up to penalty " << pen << " (requested " << mu
         << ", p=" << p << ")";
      throw InfeasibleError(os.str());
    }
    pen = std::max(pen, opt.penalty_floor) * opt.escalation_factor;
    ++escalations;
    dual = detail::solve_dual(sigma.dense(), l, with_loading, pen, opt);
  }

  ProjectionDirection out;
  out.direction = scale * dual.u;
  out.penalty = pen;
  out.escalations = escalations;
  const VectorXd su = sigma.dense() * out.direction;
  out.variance_term = std::max(0.0, out.direction.dot(su));
  const VectorXd resid = su - loading;
  auto& rep = out.feasibility;
  rep.has_loading_constraint = with_loading;
  rep.box_bound = scale * pen;
  rep.loading_bound = scale * scale * pen;
  if (with_loading) rep.slacks.push_back(std::abs(loading.dot(resid)));
  for (Index j = 0; j < p; ++j) rep.slacks.push_back(std::abs(resid[j]));
  if (design != nullptr) {
    detail::require(design->cols() == p, "projection: design has wrong column count");
    rep.sup_norm = (*design * out.direction).lpNorm<Eigen::Infinity>();
    rep.sup_bound = scale * tau;
  }
  return out;
}

/// Direction v for a linear functional x_new^T b of a single group (design X).
/// `eta` is the tolerance on |<w, (X^T X/n) v - x_new>| over the constraint set.
inline ProjectionDirection projection_direction_linear(const MatrixXd& x, const VectorXd& x_new,
                                                       double eta, double tau,
                                                       const ProjectionOptions& opt = {}) {
  detail::require(x.cols() == x_new.size(), "projection_direction_linear: dimension mismatch");
  const double norm = x_new.norm();
  detail::require(norm > 0.0, "projection_direction_linear: x_new must be non-zero");
  ProjectionOptions o = opt;
  o.escalation_factor = 1.25;
  o.max_escalations = 10;
  return solve_projection(gram(x), x_new, eta / norm, tau, &x, o);
}

/// Direction u for a quadratic-form correction against omega; constraint 3 is
/// only verified (and reported) when a design is supplied.
inline ProjectionDirection projection_direction_gamma(const SymMatrix& sigma_hat, const VectorXd& omega,
                                                      double mu, double tau,
                                                      const MatrixXd* design = nullptr,
                                                      const ProjectionOptions& opt = {}) {
  return solve_projection(sigma_hat, omega, mu, tau, design, opt);
}

/// Exact low-dimensional direction u = S^{-1} omega.
inline ProjectionDirection projection_direction_lowdim(const SymMatrix& sigma_hat, const VectorXd& omega) {
  detail::require(sigma_hat.dim() == omega.size(), "projection_direction_lowdim: dimension mismatch");
  const auto es = eigen_sym(sigma_hat);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0 || hi / lo >= 1e12) {
    throw SingularError("projection_direction_lowdim: covariance is singular or condition number >= 1e12");
  }
  ProjectionDirection out;
  Eigen::LDLT<MatrixXd> ldlt(sigma_hat.dense());
  out.direction = ldlt.solve(omega);
  // One step of iterative refinement.
  out.direction += ldlt.solve(VectorXd(omega - sigma_hat.dense() * out.direction));
  const VectorXd su = sigma_hat.dense() * out.direction;
  out.variance_term = std::max(0.0, out.direction.dot(su));
  const VectorXd resid = su - omega;
  auto& rep = out.feasibility;
  rep.has_loading_constraint = true;
  rep.slacks.push_back(std::abs(omega.dot(resid)));
  for (Index j = 0; j < resid.size(); ++j) rep.slacks.push_back(std::abs(resid[j]));
  return out;
}

/// x_new^T b_hat + v^T X^T (y - X b_hat)/n with se = sigma_hat/n * ||X v||.
inline FunctionalEstimate debiased_linear_functional(const MatrixXd& x, const VectorXd& y,
                                                     const VectorXd& b_hat, const VectorXd& v,
                                                     const VectorXd& x_new, double sigma_hat,
                                                     Index group = 0) {
  const Index n = x.rows();
  const Index p = x.cols();
  detail::require(y.size() == n && b_hat.size() == p && v.size() == p && x_new.size() == p,
                  "debiased_linear_functional: dimension mismatch");
  detail::require(sigma_hat >= 0.0, "debiased_linear_functional: sigma_hat must be >= 0");
  const double nd = static_cast<double>(n);
  const VectorXd xv = x * v;
  FunctionalEstimate est;
  est.group = group;
  est.value = x_new.dot(b_hat) + xv.dot(y - x * b_hat) / nd;
  est.se = sigma_hat / nd * xv.norm();
  return est;
}

inline FunctionalEstimate debiased_linear_functional(const MatrixXd& x, const VectorXd& y,
                                                     const VectorXd& b_hat, const ProjectionDirection& v,
                                                     const VectorXd& x_new, double sigma_hat,
                                                     Index group = 0) {
  return debiased_linear_functional(x, y, b_hat, v.direction, x_new, sigma_hat, group);
}

/// Default tolerances: mu = 0.5 sqrt(log p / n), tau = 2 sqrt(log n),
/// eta = ||x_new|| * mu.
inline double default_mu(Index n, Index p) {
  return 0.5 * std::sqrt(std::log(static_cast<double>(std::max<Index>(p, 2))) / static_cast<double>(n));
}
inline double default_tau(Index n) { return 2.0 * std::sqrt(std::log(static_cast<double>(std::max<Index>(n, 2)))); }
inline double default_eta(Index n, Index p, const VectorXd& x_new) { return x_new.norm() * default_mu(n, p); }

}  // namespace maximin
