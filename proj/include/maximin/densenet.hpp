#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "maximin/aggregation.hpp"
#include "maximin/core_linalg.hpp"
#include "maximin/debias.hpp"
#include "maximin/errors.hpp"
#include "maximin/gamma.hpp"
#include "maximin/rng.hpp"

namespace maximin {

/// Upper-tail standard normal quantile: P(Z > z) = q.
inline double normal_upper_quantile(double q) {
  detail::require(q > 0.0 && q < 1.0, "normal_upper_quantile: q must be in (0, 1)");
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<>(), q));
}

/// Upper-tail chi-square quantile with `df` degrees of freedom.
inline double chisq_upper_quantile(double df, double q) {
  detail::require(q > 0.0 && q < 1.0 && df > 0.0, "chisq_upper_quantile: bad arguments");
  return boost::math::quantile(boost::math::complement(boost::math::chi_squared_distribution<>(df), q));
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double length() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

struct SampledDraw {
  Index m = 0;
  VeclVector s_vec;
  SymMatrix gamma_matrix;  // gamma_hat - unvecl(s_vec)
  SimplexWeight weight;
  bool in_index_set = true;
};

enum class IndexSetRule { coordinate, chisq };

struct IndexSet {
  std::vector<bool> mask;
  bool fallback = false;        // empty screen; the least extreme draw was kept
  bool alpha0_warning = false;  // alpha0 above 0.01
  std::size_t size() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }
};

struct AggregatedCI {
  double point_estimate = 0.0;
  std::vector<Interval> intervals;
  Interval hull;
  std::vector<Interval> union_components;
  double alpha = 0.05;
  double alpha0 = 0.01;
  double eta0 = 0.01;
  double delta = 0.0;
  std::size_t m_set_size = 0;
  bool fallback = false;

  double length() const { return hull.length(); }
  bool has_gap() const { return union_components.size() > 1; }
};

/// Sampling covariance (V_hat)_+ + (d0 / n) I.
inline SymMatrix sampling_covariance(const GammaEstimate& est) {
  SymMatrix c = psd_project(est.v_hat);
  c.add_diagonal(est.d0 / static_cast<double>(est.n_min));
  return c;
}

/// M perturbations S^[m]; draw m uses substream m of `rng`, so the set of
/// draws does not depend on how they are later consumed.
inline std::vector<VeclVector> draw_perturbations(const GammaEstimate& est, Index count, const RngStream& rng) {
  detail::require(count >= 1, "draw_samples: M must be >= 1");
  const Index L = est.groups();
  const MvnSampler sampler(VectorXd::Zero(vecl_length(L)), sampling_covariance(est));
  std::vector<VeclVector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index m = 0; m < count; ++m) {
    RngStream r = rng.substream(static_cast<std::uint64_t>(m));
    out.emplace_back(L, sampler.draw(r));
  }
  return out;
}

/// Weights for given perturbations at ridge level delta.
inline std::vector<SampledDraw> solve_draws(const GammaEstimate& est, std::span<const VeclVector> perturbations,
                                            double delta) {
  std::vector<SampledDraw> out;
  out.reserve(perturbations.size());
  const Index L = est.groups();
  for (std::size_t m = 0; m < perturbations.size(); ++m) {
    detail::require(perturbations[m].groups() == L, "solve_draws: perturbation has wrong L");
    SampledDraw d;
    d.m = static_cast<Index>(m);
    d.s_vec = perturbations[m];
    MatrixXd g(L, L);
    for (Index l = 0; l < L; ++l)
      for (Index k = 0; k <= l; ++k) {
        g(l, k) = est.gamma_hat(l, k) - d.s_vec.at(l, k);
        g(k, l) = g(l, k);
      }
    d.gamma_matrix = SymMatrix(g);
    d.weight = min_quadratic_simplex(d.gamma_matrix, delta);
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<SampledDraw> draw_samples(const GammaEstimate& est, Index count, double delta,
                                             const RngStream& rng) {
  const auto s = draw_perturbations(est, count, rng);
  return solve_draws(est, s, delta);
}

namespace detail {

inline double max_standardized(const VeclVector& s, const VectorXd& sd) {
  double m = 0.0;
  for (Index i = 0; i < s.size(); ++i) m = std::max(m, std::abs(s[i]) / sd[i]);
  return m;
}

}  // namespace detail

/**
 * Screens draws. Coordinate rule: every |S_pi| / sd_pi <= 1.1 z_{alpha0/(L(L+1))};
 * chi-square rule: ||C^{-1/2} S||^2 <= 1.1 chi2_{L(L+1)/2, alpha0}. C is the
 * sampling covariance. Marks `in_index_set` on the draws.
 */
inline IndexSet index_set(std::vector<SampledDraw>& draws, const GammaEstimate& est, double alpha0,
                          IndexSetRule rule = IndexSetRule::coordinate) {
  detail::require(alpha0 > 0.0 && alpha0 <= 0.05, "index_set: alpha0 must be in (0, 0.05]");
  IndexSet out;
  out.alpha0_warning = alpha0 > 0.01;
  const Index L = est.groups();
  const Index d = vecl_length(L);
  const SymMatrix c = sampling_covariance(est);
  const VectorXd sd = c.dense().diagonal().cwiseSqrt();
  out.mask.assign(draws.size(), false);
  if (draws.empty()) return out;

  if (rule == IndexSetRule::coordinate) {
    const double thr = 1.1 * normal_upper_quantile(alpha0 / static_cast<double>(L * (L + 1)));
    for (std::size_t m = 0; m < draws.size(); ++m)
      out.mask[m] = detail::max_standardized(draws[m].s_vec, sd) <= thr;
  } else {
    const double thr = 1.1 * chisq_upper_quantile(static_cast<double>(d), alpha0);
    const MatrixXd w = sym_inv_sqrt(c);
    for (std::size_t m = 0; m < draws.size(); ++m)
      out.mask[m] = (w * draws[m].s_vec.values()).squaredNorm() <= thr;
  }
  if (out.size() == 0) {
    std::size_t best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < draws.size(); ++m) {
      const double v = detail::max_standardized(draws[m].s_vec, sd);
      if (v < best_v) {
        best_v = v;
        best = m;
      }
    }
    out.mask[best] = true;
    out.fallback = true;
  }
  for (std::size_t m = 0; m < draws.size(); ++m) draws[m].in_index_set = out.mask[m];
  return out;
}

/// Center sum_l g_l f_l, half-width (1 + eta0) z_{alpha/2} sqrt(sum_l g_l^2 se_l^2).
inline Interval sampled_interval(const VectorXd& weights, std::span<const FunctionalEstimate> functionals,
                                 double eta0 = 0.01, double alpha = 0.05) {
  detail::require(static_cast<std::size_t>(weights.size()) == functionals.size(),
                  "sampled_interval: one functional per group required");
  detail::require(eta0 >= 0.0, "sampled_interval: eta0 must be >= 0");
  detail::require(alpha > 0.0 && alpha < 1.0, "sampled_interval: alpha must be in (0, 1)");
  double center = 0.0, var = 0.0;
  for (std::size_t l = 0; l < functionals.size(); ++l) {
    const double g = weights[static_cast<Index>(l)];
    center += g * functionals[l].value;
    var += g * g * functionals[l].se * functionals[l].se;
  }
  const double half = (1.0 + eta0) * normal_upper_quantile(alpha / 2.0) * std::sqrt(var);
  return {center - half, center + half};
}

inline Interval sampled_interval(const SampledDraw& draw, std::span<const FunctionalEstimate> functionals,
                                 double eta0 = 0.01, double alpha = 0.05) {
  return sampled_interval(draw.weight.weights, functionals, eta0, alpha);
}

/// Maximal disjoint closed intervals covering the union (sort and merge).
inline std::vector<Interval> merge_intervals(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) {
    return a.lower < b.lower || (a.lower == b.lower && a.upper < b.upper);
  });
  std::vector<Interval> out;
  for (const auto& iv : v) {
    if (!out.empty() && iv.lower <= out.back().upper) {
      out.back().upper = std::max(out.back().upper, iv.upper);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

inline AggregatedCI aggregate_ci(std::vector<Interval> intervals, double point_estimate) {
  detail::require(!intervals.empty(), "aggregate_ci: need at least one interval");
  AggregatedCI ci;
  ci.point_estimate = point_estimate;
  ci.union_components = merge_intervals(intervals);
  ci.hull = {ci.union_components.front().lower, ci.union_components.front().upper};
  for (const auto& c : ci.union_components) {
    ci.hull.lower = std::min(ci.hull.lower, c.lower);
    ci.hull.upper = std::max(ci.hull.upper, c.upper);
  }
  ci.m_set_size = intervals.size();
  ci.intervals = std::move(intervals);
  return ci;
}

/// Rejects iff `value` lies in no union component.
inline bool test_null(const AggregatedCI& ci, double value) {
  for (const auto& c : ci.union_components)
    if (c.contains(value)) return false;
  return true;
}

struct DenseNetParams {
  Index M = 500;
  double alpha = 0.05;
  double alpha0 = 0.01;
  double eta0 = 0.01;
  double delta = 0.0;
  IndexSetRule rule = IndexSetRule::coordinate;
};

/// Point estimate sum_l g_l f_l at the ridge weight for Gamma_hat.
inline double point_estimate(const SimplexWeight& w, std::span<const FunctionalEstimate> functionals) {
  double s = 0.0;
  for (std::size_t l = 0; l < functionals.size(); ++l) s += w.weights[static_cast<Index>(l)] * functionals[l].value;
  return s;
}

/// Full interval from given perturbations (lets several deltas share one set of draws).
inline AggregatedCI densenet_ci(const GammaEstimate& est, std::span<const FunctionalEstimate> functionals,
                                std::span<const VeclVector> perturbations, const DenseNetParams& prm) {
  detail::require(static_cast<Index>(functionals.size()) == est.groups(), "densenet_ci: one functional per group");
  auto draws = solve_draws(est, perturbations, prm.delta);
  const IndexSet is = index_set(draws, est, prm.alpha0, prm.rule);
  std::vector<Interval> ivs;
  for (const auto& d : draws)
    if (d.in_index_set) ivs.push_back(sampled_interval(d, functionals, prm.eta0, prm.alpha));
  const SimplexWeight w = min_quadratic_simplex(est.gamma_hat, prm.delta);
  AggregatedCI ci = aggregate_ci(std::move(ivs), point_estimate(w, functionals));
  ci.alpha = prm.alpha;
  ci.alpha0 = prm.alpha0;
  ci.eta0 = prm.eta0;
  ci.delta = prm.delta;
  ci.fallback = is.fallback;
  return ci;
}

inline AggregatedCI densenet_ci(const GammaEstimate& est, std::span<const FunctionalEstimate> functionals,
                                const DenseNetParams& prm, const RngStream& rng) {
  const auto s = draw_perturbations(est, prm.M, rng);
  return densenet_ci(est, functionals, s, prm);
}

/// sum_m ||g^[m] - g_hat||^2 / sum_m ||Gamma^[m] - Gamma_hat||_F^2 over all draws.
inline double instability_measure(const GammaEstimate& est, double delta, std::span<const VeclVector> perturbations) {
  detail::require(!perturbations.empty(), "instability_measure: need at least one draw");
  const SimplexWeight base = min_quadratic_simplex(est.gamma_hat, delta);
  const auto draws = solve_draws(est, perturbations, delta);
  double num = 0.0, den = 0.0;
  for (const auto& d : draws) {
    num += (d.weight.weights - base.weights).squaredNorm();
    den += unvecl(d.s_vec).dense().squaredNorm();
  }
  if (den == 0.0) return 0.0;
  return num / den;
}

inline double instability_measure(const GammaEstimate& est, double delta, Index count, const RngStream& rng) {
  const auto s = draw_perturbations(est, count, rng);
  return instability_measure(est, delta, s);
}

struct DeltaSelection {
  double delta = 0.0;
  double instability0 = 0.0;
  std::vector<double> reward_ratio;  // per grid value; NaN when not evaluated
};

/**
 * Returns 0 if I(0) < t0; otherwise the largest grid delta whose estimated
 * reward is at least `reward_floor` times the unpenalized one (0 if none).
 */
inline DeltaSelection select_delta_detail(const GammaEstimate& est, std::span<const double> grid,
                                          std::span<const VeclVector> perturbations, double reward_floor = 0.95,
                                          double t0 = 0.5) {
  detail::require(!grid.empty(), "select_delta: empty grid");
  bool has_zero = false;
  for (double d : grid) {
    detail::require(d >= 0.0 && d <= 2.0, "select_delta: grid must lie in [0, 2]");
    has_zero = has_zero || d == 0.0;
  }
  detail::require(has_zero, "select_delta: grid must contain 0");
  DeltaSelection sel;
  sel.reward_ratio.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  sel.instability0 = instability_measure(est, 0.0, perturbations);
  if (sel.instability0 < t0) return sel;
  const double r0 = reward_estimated(min_quadratic_simplex(est.gamma_hat, 0.0), est.gamma_hat);
  if (!(r0 > 0.0)) return sel;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double r = reward_estimated(min_quadratic_simplex(est.gamma_hat, grid[i]), est.gamma_hat);
    sel.reward_ratio[i] = r / r0;
    if (sel.reward_ratio[i] >= reward_floor && grid[i] > sel.delta) sel.delta = grid[i];
  }
  return sel;
}

inline double select_delta(const GammaEstimate& est, std::span<const double> grid, Index count,
                           const RngStream& rng, double reward_floor = 0.95, double t0 = 0.5) {
  const auto s = draw_perturbations(est, count, rng);
  return select_delta_detail(est, grid, s, reward_floor, t0).delta;
}

}  // namespace maximin
