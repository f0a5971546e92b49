#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "maximin/core_linalg.hpp"
#include "maximin/errors.hpp"

namespace maximin {

// Inputs are assumed centered; no intercept is fitted anywhere in this module.

struct LassoOptions {
  double tol = 1e-9;       // stop when the largest coefficient change in a full sweep is below this
  int max_sweeps = 10000;  // counts every sweep, full or active-set
  bool record_trace = false;
};

struct LassoFit {
  VectorXd coefficients;
  double lambda = 0.0;
  double noise_sd = 0.0;  // sqrt(||y - X b||^2 / n)
  double objective = 0.0;
  int sweeps = 0;
  bool converged = false;
  std::vector<double> trace;  // objective after each sweep, if requested
};

/// Column weights ||X_j||_2 / sqrt(n).
inline VectorXd column_weights(const MatrixXd& x) {
  return (x.colwise().squaredNorm().transpose() / static_cast<double>(x.rows())).cwiseSqrt();
}

/// ||y - Xb||^2/(2n) + lambda * sum_j w_j |b_j|.
inline double lasso_objective(const MatrixXd& x, const VectorXd& y, const VectorXd& b,
                              double lambda) {
  const double n = static_cast<double>(x.rows());
  const VectorXd w = column_weights(x);
  return (y - x * b).squaredNorm() / (2.0 * n) + lambda * w.cwiseProduct(b.cwiseAbs()).sum();
}

namespace detail {

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

inline void check_design(const MatrixXd& x, const VectorXd& y) {
  require(x.rows() == y.size(), "lasso: X rows and y length differ");
  require(x.rows() >= 2, "lasso: need at least two observations");
  if (!x.allFinite() || !y.allFinite()) throw NumericError("lasso: non-finite data");
}

}  // namespace detail

/**
 * Weighted Lasso by cyclic coordinate descent.
 *
 * Minimizes ||y - Xb||^2/(2n) + lambda * sum_j (||X_j||_2/sqrt(n)) |b_j|.
 * Sweeps alternate between the full coordinate set and the current active
 * set; convergence is declared only after a full sweep moves no coefficient
 * by more than `tol`.
 */
inline LassoFit lasso_fit(const MatrixXd& x, const VectorXd& y, double lambda,
                          const LassoOptions& opts = {}, const VectorXd* warm_start = nullptr) {
  detail::check_design(x, y);
  detail::require(lambda >= 0.0 && std::isfinite(lambda), "lasso: lambda must be finite and >= 0");
  const Index n = x.rows();
  const Index p = x.cols();
  if (lambda == 0.0 && p > n) {
    throw SingularError("lasso: lambda = 0 with p > n has no unique solution");
  }
  const double nd = static_cast<double>(n);
  const VectorXd csq = x.colwise().squaredNorm().transpose() / nd;
  const VectorXd w = csq.cwiseSqrt();

  VectorXd b = VectorXd::Zero(p);
  if (warm_start != nullptr) {
    detail::require(warm_start->size() == p, "lasso: warm start has wrong length");
    b = *warm_start;
  }
  VectorXd r = y - x * b;

  auto objective = [&] { return r.squaredNorm() / (2.0 * nd) + lambda * w.cwiseProduct(b.cwiseAbs()).sum(); };

  auto update = [&](Index j) {
    if (csq[j] == 0.0) {
      if (b[j] != 0.0) {
        b[j] = 0.0;
      }
      return 0.0;
    }
    const double old = b[j];
    const double z = x.col(j).dot(r) / nd + csq[j] * old;
    const double nb = detail::soft_threshold(z, lambda * w[j]) / csq[j];
    const double d = nb - old;
    if (d != 0.0) {
      r.noalias() -= d * x.col(j);
      b[j] = nb;
    }
    return std::abs(d);
  };

  // Newton step on the active set with signs held fixed, cut at the first sign
  // change. Coordinate descent alone crawls on nearly collinear active columns.
  auto newton_step = [&](const std::vector<Index>& candidates) {
    std::vector<Index> act;
    for (Index j : candidates)
      if (b[j] != 0.0) act.push_back(j);
    const Index k = static_cast<Index>(act.size());
    if (k == 0) return;
    const MatrixXd xa = x(Eigen::all, act);
    const MatrixXd g = xa.transpose() * xa / nd;
    VectorXd grad = -xa.transpose() * r / nd;
    VectorXd ba(k);
    for (Index i = 0; i < k; ++i) {
      const Index j = act[static_cast<std::size_t>(i)];
      ba[i] = b[j];
      grad[i] += lambda * w[j] * (ba[i] > 0.0 ? 1.0 : -1.0);
    }
    const VectorXd d = -g.completeOrthogonalDecomposition().solve(grad);
    const double slope = grad.dot(d);
    const double curv = d.dot(g * d);
    if (!d.allFinite() || !(slope < 0.0) || !(curv > 0.0)) return;
    double t = -slope / curv;
    Index hit = -1;
    for (Index i = 0; i < k; ++i) {
      if (ba[i] * d[i] < 0.0 && -ba[i] / d[i] < t) {
        t = -ba[i] / d[i];
        hit = i;
      }
    }
    for (Index i = 0; i < k; ++i) b[act[static_cast<std::size_t>(i)]] = ba[i] + t * d[i];
    if (hit >= 0) b[act[static_cast<std::size_t>(hit)]] = 0.0;
    r = y - x * b;
  };

  LassoFit fit;
  fit.lambda = lambda;
  std::vector<Index> active, previous;
  active.reserve(static_cast<std::size_t>(p));
  int sweeps = 0;
  bool converged = false;
  while (sweeps < opts.max_sweeps) {
    double full_change = 0.0;
    for (Index j = 0; j < p; ++j) full_change = std::max(full_change, update(j));
    ++sweeps;
    if (opts.record_trace) fit.trace.push_back(objective());
    if (full_change < opts.tol) {
      converged = true;
      break;
    }
    previous.swap(active);
    active.clear();
    for (Index j = 0; j < p; ++j)
      if (b[j] != 0.0) active.push_back(j);
    for (int inner = 1; sweeps < opts.max_sweeps; ++inner) {
      double change = 0.0;
      for (Index j : active) change = std::max(change, update(j));
      ++sweeps;
      if (opts.record_trace) fit.trace.push_back(objective());
      if (change < opts.tol) break;
      if (inner % 100 == 0) newton_step(active);
    }
    if (active == previous) newton_step(active);
  }
  // Residual drift from many rank-one updates is removed before reporting.
  r = y - x * b;
  fit.objective = objective();
  fit.coefficients = std::move(b);
  fit.sweeps = sweeps;
  fit.converged = converged;
  fit.noise_sd = std::sqrt(r.squaredNorm() / nd);
  return fit;
}

/// Smallest lambda with an all-zero solution: max_j |X_j^T y| / (n w_j).
inline double lambda_max(const MatrixXd& x, const VectorXd& y) {
  const double n = static_cast<double>(x.rows());
  const VectorXd w = column_weights(x);
  double m = 0.0;
  for (Index j = 0; j < x.cols(); ++j)
    if (w[j] > 0.0) m = std::max(m, std::abs(x.col(j).dot(y)) / (n * w[j]));
  return m;
}

/// Log-spaced descending grid from lambda_max down to ratio * lambda_max.
inline std::vector<double> lambda_grid(const MatrixXd& x, const VectorXd& y, int count = 50,
                                       double ratio = -1.0) {
  detail::require(count >= 1, "lambda_grid: count must be >= 1");
  if (ratio <= 0.0) ratio = x.rows() > x.cols() ? 1e-4 : 1e-2;
  const double top = std::max(lambda_max(x, y), 1e-12);
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    grid[static_cast<std::size_t>(i)] = top * std::pow(ratio, t);
  }
  return grid;
}

/// Fits along a descending grid with warm starts.
inline std::vector<LassoFit> lasso_path(const MatrixXd& x, const VectorXd& y,
                                        std::span<const double> grid, const LassoOptions& opts = {}) {
  std::vector<LassoFit> fits;
  fits.reserve(grid.size());
  VectorXd warm = VectorXd::Zero(x.cols());
  for (double lam : grid) {
    fits.push_back(lasso_fit(x, y, lam, opts, &warm));
    warm = fits.back().coefficients;
  }
  return fits;
}

/**
 * K-fold cross-validation over a descending grid. Observation i belongs to
 * fold i mod K. Returns the grid value with the smallest mean held-out squared
 * error; ties go to the larger lambda.
 */
inline double cv_select_lambda(const MatrixXd& x, const VectorXd& y, int folds,
                               std::span<const double> grid, const LassoOptions& opts = {}) {
  detail::check_design(x, y);
  detail::require(folds >= 2, "cv_select_lambda: folds must be >= 2");
  detail::require(!grid.empty(), "cv_select_lambda: empty grid");
  detail::require(x.rows() >= folds, "cv_select_lambda: fewer observations than folds");
  for (std::size_t i = 1; i < grid.size(); ++i)
    detail::require(grid[i] <= grid[i - 1], "cv_select_lambda: grid must be sorted descending");
  if (grid.size() == 1) return grid[0];

  const Index n = x.rows();
  const Index p = x.cols();
  std::vector<double> err(grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(i);
    const MatrixXd xt = x(train, Eigen::all);
    const VectorXd yt = y(train);
    const MatrixXd xv = x(test, Eigen::all);
    const VectorXd yv = y(test);
    VectorXd warm = VectorXd::Zero(p);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      LassoFit fit;
      if (grid[g] == 0.0 && p > xt.rows()) {
        err[g] = std::numeric_limits<double>::infinity();
        continue;
      }
      fit = lasso_fit(xt, yt, grid[g], opts, &warm);
      warm = fit.coefficients;
      err[g] += (yv - xv * fit.coefficients).squaredNorm() / static_cast<double>(n);
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (err[g] < err[best]) best = g;
  return grid[best];
}

/// sigma * sqrt((2 + c) * ln(p) / n).
inline double default_lambda(Index n, Index p, double sigma, double c = 0.01) {
  detail::require(n >= 1 && p >= 1, "default_lambda: n and p must be >= 1");
  detail::require(sigma >= 0.0, "default_lambda: sigma must be >= 0");
  return sigma * std::sqrt((2.0 + c) * std::log(static_cast<double>(p)) / static_cast<double>(n));
}

enum class LambdaRule {
  cv,      // cross-validated lambda
  plugin,  // CV fit -> sigma_hat -> default_lambda -> refit
};

struct LassoTuning {
  LambdaRule rule = LambdaRule::cv;
  int folds = 5;
  int grid_size = 40;
  double plugin_c = 0.01;
  LassoOptions solver{};
};

/// Tuned Lasso fit used for every initial estimator.
inline LassoFit tuned_lasso(const MatrixXd& x, const VectorXd& y, const LassoTuning& t = {}) {
  const auto grid = lambda_grid(x, y, t.grid_size);
  const int folds = static_cast<int>(std::min<Index>(t.folds, x.rows()));
  const double lam = cv_select_lambda(x, y, folds, grid, t.solver);
  LassoFit fit = lasso_fit(x, y, lam, t.solver);
  if (t.rule == LambdaRule::plugin) {
    const double lam2 = default_lambda(x.rows(), x.cols(), fit.noise_sd, t.plugin_c);
    fit = lasso_fit(x, y, lam2, t.solver, &fit.coefficients);
  }
  return fit;
}

/// Ordinary least squares with the same residual-based noise estimate.
inline LassoFit least_squares(const MatrixXd& x, const VectorXd& y) {
  detail::check_design(x, y);
  if (x.cols() > x.rows()) throw SingularError("least_squares: p > n");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  if (qr.rank() < x.cols()) throw SingularError("least_squares: rank-deficient design");
  LassoFit fit;
  fit.coefficients = qr.solve(y);
  const VectorXd r = y - x * fit.coefficients;
  fit.noise_sd = std::sqrt(r.squaredNorm() / static_cast<double>(x.rows()));
  fit.objective = r.squaredNorm() / (2.0 * static_cast<double>(x.rows()));
  fit.converged = true;
  return fit;
}

}  // namespace maximin
