#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "maximin/core_linalg.hpp"
#include "maximin/debias.hpp"
#include "maximin/errors.hpp"
#include "maximin/lasso.hpp"
#include "maximin/rng.hpp"

namespace maximin {

struct GroupData {
  MatrixXd x;
  VectorXd y;
};

struct MultiSourceData {
  std::vector<GroupData> groups;
  std::optional<MatrixXd> target_x;
  std::optional<SymMatrix> known_sigma_q;

  Index num_groups() const { return static_cast<Index>(groups.size()); }
  Index dim() const { return groups.empty() ? 0 : groups.front().x.cols(); }
  Index n_min() const {
    Index m = groups.empty() ? 0 : groups.front().x.rows();
    for (const auto& g : groups) m = std::min(m, g.x.rows());
    return m;
  }

  void validate() const {
    detail::require(!groups.empty(), "MultiSourceData: need at least one group");
    const Index p = dim();
    detail::require(p >= 1, "MultiSourceData: p must be >= 1");
    for (const auto& g : groups) {
      detail::require(g.x.cols() == p, "MultiSourceData: groups must share p");
      detail::require(g.x.rows() == g.y.size(), "MultiSourceData: X/y length mismatch");
      if (!g.x.allFinite() || !g.y.allFinite()) throw NumericError("MultiSourceData: non-finite data");
    }
    if (target_x) {
      detail::require(target_x->cols() == p, "MultiSourceData: target has wrong p");
      if (!target_x->allFinite()) throw NumericError("MultiSourceData: non-finite target data");
    }
    if (known_sigma_q) detail::require(known_sigma_q->dim() == p, "MultiSourceData: known covariance has wrong p");
  }
};

enum class Regime { covshift, known_sigma, no_shift };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::covshift: return "covshift";
    case Regime::known_sigma: return "known";
    case Regime::no_shift: return "noshift";
  }
  return "?";
}

struct GammaTuning {
  LassoTuning lasso{};
  bool lowdim = false;   // OLS fits and exact projection directions
  std::optional<bool> split;  // unset: on for covshift/known, off for no-shift
  double mu = -1.0;      // negative: default_mu(|B_l|, p)
  double tau = -1.0;     // negative: default_tau(|B_l|)
  double tau0 = 0.2;
  std::uint64_t split_seed = 0;
  ProjectionOptions projection{};
  // Test hooks: use these coefficient vectors instead of fitting.
  std::optional<std::vector<VectorXd>> forced_b;
};

struct GammaEstimate {
  SymMatrix gamma_hat;
  SymMatrix v_hat;
  Index n_min = 0;
  double d0 = 1.0;
  Regime regime = Regime::covshift;
  bool split = false;
  std::uint64_t split_seed = 0;
  std::vector<VectorXd> b_init;                 // per-group initial fits
  std::vector<double> sigma_hat;                // per-group noise sd
  std::vector<Index> n_correction;              // rows used in the bias correction per group
  std::vector<std::vector<VectorXd>> u;         // u[l][k]; empty in the no-shift regime
  std::vector<std::vector<FeasibilityReport>> feasibility;

  Index groups() const { return gamma_hat.dim(); }
};

/// max{tau0 * max_pi n V_pi,pi, 1}.
inline double compute_d0(const SymMatrix& v_hat, Index n_min, double tau0 = 0.2) {
  detail::require(tau0 > 0.0, "compute_d0: tau0 must be > 0");
  detail::require(n_min >= 1, "compute_d0: n must be >= 1");
  const double m = v_hat.dense().diagonal().maxCoeff();
  return std::max(tau0 * static_cast<double>(n_min) * m, 1.0);
}

namespace detail {

/// Content fingerprint of a group so that its split does not depend on the
/// group's position in the input list.
inline std::uint64_t fingerprint(const GroupData& g) {
  std::uint64_t h = stream_hash(static_cast<std::uint64_t>(g.x.rows()), static_cast<std::uint64_t>(g.x.cols()));
  for (Index i = 0; i < g.y.size(); ++i) h = stream_hash(h, std::bit_cast<std::uint64_t>(g.y[i]));
  return h;
}

struct Split {
  std::vector<Index> a, b;
};

/// Random halves: |A| = floor(n/2). Without splitting both halves are all rows.
inline Split make_split(Index n, bool split, RngStream rng) {
  Split s;
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (!split) {
    s.a = idx;
    s.b = idx;
    return s;
  }
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const auto half = static_cast<std::size_t>(n / 2);
  s.a.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
  s.b.assign(idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end());
  std::sort(s.a.begin(), s.a.end());
  std::sort(s.b.begin(), s.b.end());
  return s;
}

inline VectorXd fit_initial(const MatrixXd& x, const VectorXd& y, const GammaTuning& t, Index l) {
  if (t.forced_b) {
    require(static_cast<Index>(t.forced_b->size()) > l, "gamma: forced_b has too few groups");
    require((*t.forced_b)[static_cast<std::size_t>(l)].size() == x.cols(), "gamma: forced_b has wrong length");
    return (*t.forced_b)[static_cast<std::size_t>(l)];
  }
  if (t.lowdim) return least_squares(x, y).coefficients;
  return tuned_lasso(x, y, t.lasso).coefficients;
}

/// Fourth-moment block: (1/denom) sum_i [(x_i'b_l1)(x_i'b_k1)(x_i'b_l2)(x_i'b_k2) - G_l1k1 G_l2k2].
inline MatrixXd fourth_moment_block(const MatrixXd& rows, const MatrixXd& xb, const MatrixXd& g_bar) {
  const Index L = xb.cols();
  const Index d = vecl_length(L);
  MatrixXd out = MatrixXd::Zero(d, d);
  // Per-row products for every pi.
  MatrixXd prod(rows.rows(), d);
  VectorXd center(d);
  for (Index a = 0; a < d; ++a) {
    const auto [l, k] = vecl_pair(a, L);
    prod.col(a) = xb.col(l).cwiseProduct(xb.col(k));
    center[a] = g_bar(l, k);
  }
  for (Index a = 0; a < d; ++a)
    for (Index c = 0; c <= a; ++c) {
      const double s = prod.col(a).dot(prod.col(c)) - static_cast<double>(rows.rows()) * center[a] * center[c];
      out(a, c) = s;
      out(c, a) = s;
    }
  return out;
}

inline std::string pair_context(Index l, Index k) {
  return " (groups l=" + std::to_string(l + 1) + ", k=" + std::to_string(k + 1) + ")";
}

/// Shared implementation for the shift-aware regimes.
inline GammaEstimate gamma_shift_aware(const MultiSourceData& data, const GammaTuning& t, bool known) {
  data.validate();
  const Index L = data.num_groups();
  const Index p = data.dim();
  for (const auto& g : data.groups) require(g.x.rows() >= 4, "gamma: each group needs n_l >= 4");

  GammaEstimate est;
  est.regime = known ? Regime::known_sigma : Regime::covshift;
  est.split = t.split.value_or(true);
  est.split_seed = t.split_seed;
  est.n_min = data.n_min();

  std::vector<Split> splits;
  std::vector<MatrixXd> xb(static_cast<std::size_t>(L));
  std::vector<VectorXd> res(static_cast<std::size_t>(L));
  std::vector<SymMatrix> sig(static_cast<std::size_t>(L));
  for (Index l = 0; l < L; ++l) {
    const auto& g = data.groups[static_cast<std::size_t>(l)];
    const RngStream rng(t.split_seed, stream_hash(0x5EED, fingerprint(g)));
    splits.push_back(make_split(g.x.rows(), est.split, rng));
    const auto& sp = splits.back();
    const MatrixXd xa = g.x(sp.a, Eigen::all);
    const VectorXd ya = g.y(sp.a);
    est.b_init.push_back(fit_initial(xa, ya, t, l));
    xb[static_cast<std::size_t>(l)] = g.x(sp.b, Eigen::all);
    res[static_cast<std::size_t>(l)] = g.y(sp.b) - xb[static_cast<std::size_t>(l)] * est.b_init.back();
    const double nb = static_cast<double>(sp.b.size());
    est.sigma_hat.push_back(std::sqrt(res[static_cast<std::size_t>(l)].squaredNorm() / nb));
    est.n_correction.push_back(static_cast<Index>(sp.b.size()));
    sig[static_cast<std::size_t>(l)] = gram(xb[static_cast<std::size_t>(l)]);
  }

  // Target covariance estimates: S_hat enters the plug-in, S_tilde builds omega.
  SymMatrix s_hat, s_tilde, s_bar;
  Index n_target_b = 0;
  if (known) {
    require(data.known_sigma_q.has_value(), "gamma_hat_known_sigma: known covariance required");
    s_hat = *data.known_sigma_q;
    s_tilde = s_hat;
  } else {
    require(data.target_x.has_value(), "gamma_hat_covshift: target covariates required");
    const MatrixXd& xq = *data.target_x;
    require(xq.rows() >= 2, "gamma_hat_covshift: need at least two target rows");
    const RngStream rng(t.split_seed, stream_hash(0x7A59E7, static_cast<std::uint64_t>(xq.rows())));
    const Split sp = make_split(xq.rows(), est.split, rng);
    s_hat = gram(xq(sp.b, Eigen::all));
    s_tilde = gram(xq(sp.a, Eigen::all));
    s_bar = gram(xq);
    n_target_b = static_cast<Index>(sp.b.size());
  }

  MatrixXd bmat(p, L);
  for (Index l = 0; l < L; ++l) bmat.col(l) = est.b_init[static_cast<std::size_t>(l)];
  const MatrixXd plug = bmat.transpose() * s_hat.dense() * bmat;
  const MatrixXd omega = s_tilde.dense() * bmat;

  est.u.assign(static_cast<std::size_t>(L), std::vector<VectorXd>(static_cast<std::size_t>(L)));
  est.feasibility.assign(static_cast<std::size_t>(L), std::vector<FeasibilityReport>(static_cast<std::size_t>(L)));
  MatrixXd corr(L, L);  // corr(l, k) = u^(l,k)' X_Bl' res_l / |B_l|
  for (Index l = 0; l < L; ++l) {
    const auto ls = static_cast<std::size_t>(l);
    const Index nb = est.n_correction[ls];
    const double mu = t.mu >= 0.0 ? t.mu : default_mu(nb, p);
    const double tau = t.tau >= 0.0 ? t.tau : default_tau(nb);
    const VectorXd xres = xb[ls].transpose() * res[ls] / static_cast<double>(nb);
    for (Index k = 0; k < L; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const VectorXd w = omega.col(k);
      if (w.norm() == 0.0) {
        est.u[ls][ks] = VectorXd::Zero(p);
      } else {
        try {
          ProjectionDirection dir = t.lowdim ? projection_direction_lowdim(sig[ls], w)
                                             : projection_direction_gamma(sig[ls], w, mu, tau, &xb[ls], t.projection);
          est.u[ls][ks] = std::move(dir.direction);
          est.feasibility[ls][ks] = std::move(dir.feasibility);
        } catch (const InfeasibleError& e) {
          throw InfeasibleError(std::string(e.what()) + pair_context(l, k));
        } catch (const SingularError& e) {
          throw SingularError(std::string(e.what()) + pair_context(l, k));
        }
      }
      corr(l, k) = est.u[ls][ks].dot(xres);
    }
  }

  MatrixXd g(L, L);
  for (Index l = 0; l < L; ++l)
    for (Index k = 0; k <= l; ++k) {
      g(l, k) = plug(l, k) + corr(l, k) + corr(k, l);
      g(k, l) = g(l, k);
    }
  est.gamma_hat = SymMatrix(g);

  // Sampling covariance.
  const Index d = vecl_length(L);
  MatrixXd v = MatrixXd::Zero(d, d);
  auto noise_term = [&](Index grp, Index other1, Index l2, Index k2) {
    // Covariance of the group-`grp` correction in entry (grp, other1) with entry (l2, k2).
    const auto gs = static_cast<std::size_t>(grp);
    if (l2 != grp && k2 != grp) return 0.0;
    VectorXd dir = VectorXd::Zero(p);
    if (l2 == grp) dir += est.u[gs][static_cast<std::size_t>(k2)];
    if (k2 == grp) dir += est.u[gs][static_cast<std::size_t>(l2)];
    const double s2 = est.sigma_hat[gs] * est.sigma_hat[gs];
    return s2 / static_cast<double>(est.n_correction[gs]) *
           est.u[gs][static_cast<std::size_t>(other1)].dot(sig[gs].dense() * dir);
  };
  for (Index a = 0; a < d; ++a) {
    const auto [l1, k1] = vecl_pair(a, L);
    for (Index c = 0; c < d; ++c) {
      const auto [l2, k2] = vecl_pair(c, L);
      v(a, c) = noise_term(l1, k1, l2, k2) + noise_term(k1, l1, l2, k2);
    }
  }
  if (!known) {
    const MatrixXd& xq = *data.target_x;
    const MatrixXd xqb = xq * bmat;
    const MatrixXd g_bar = bmat.transpose() * s_bar.dense() * bmat;
    const double denom = static_cast<double>(n_target_b) * static_cast<double>(xq.rows());
    v += fourth_moment_block(xq, xqb, g_bar) / denom;
  }
  est.v_hat = SymMatrix(v);
  est.d0 = compute_d0(est.v_hat, est.n_min, t.tau0);
  return est;
}

}  // namespace detail

/// Bias-corrected Gamma under covariate shift, using unlabeled target rows.
inline GammaEstimate gamma_hat_covshift(const MultiSourceData& data, const GammaTuning& t = {}) {
  return detail::gamma_shift_aware(data, t, false);
}

/// Bias-corrected Gamma when the target covariance is known exactly.
inline GammaEstimate gamma_hat_known_sigma(const MultiSourceData& data, const GammaTuning& t = {}) {
  return detail::gamma_shift_aware(data, t, true);
}

/**
 * Gamma without covariate shift. The plug-in covariance pools every group row
 * and every target row; the projection direction for entry (l, k) is b_k
 * itself. With `split`, fits use the A halves and corrections the B halves.
 */
inline GammaEstimate gamma_hat_noshift(const MultiSourceData& data, const GammaTuning& t = {}) {
  data.validate();
  const Index L = data.num_groups();
  const Index p = data.dim();

  GammaEstimate est;
  est.regime = Regime::no_shift;
  est.split = t.split.value_or(false);
  est.split_seed = t.split_seed;
  est.n_min = data.n_min();

  std::vector<MatrixXd> xb(static_cast<std::size_t>(L));
  std::vector<VectorXd> res(static_cast<std::size_t>(L));
  for (Index l = 0; l < L; ++l) {
    const auto& g = data.groups[static_cast<std::size_t>(l)];
    if (est.split) detail::require(g.x.rows() >= 4, "gamma_hat_noshift: splitting needs n_l >= 4");
    const RngStream rng(t.split_seed, stream_hash(0x5EED, detail::fingerprint(g)));
    const detail::Split sp = detail::make_split(g.x.rows(), est.split, rng);
    est.b_init.push_back(detail::fit_initial(g.x(sp.a, Eigen::all), g.y(sp.a), t, l));
    xb[static_cast<std::size_t>(l)] = g.x(sp.b, Eigen::all);
    res[static_cast<std::size_t>(l)] = g.y(sp.b) - xb[static_cast<std::size_t>(l)] * est.b_init.back();
    est.n_correction.push_back(static_cast<Index>(sp.b.size()));
    est.sigma_hat.push_back(std::sqrt(res[static_cast<std::size_t>(l)].squaredNorm() / static_cast<double>(sp.b.size())));
  }

  // Pooled rows.
  Index total = 0;
  for (const auto& g : data.groups) total += g.x.rows();
  if (data.target_x) total += data.target_x->rows();
  MatrixXd pooled(total, p);
  {
    Index r = 0;
    for (const auto& g : data.groups) {
      pooled.middleRows(r, g.x.rows()) = g.x;
      r += g.x.rows();
    }
    if (data.target_x) pooled.middleRows(r, data.target_x->rows()) = *data.target_x;
  }
  const SymMatrix s_hat = gram(pooled);

  MatrixXd bmat(p, L);
  for (Index l = 0; l < L; ++l) bmat.col(l) = est.b_init[static_cast<std::size_t>(l)];
  const MatrixXd plug = bmat.transpose() * s_hat.dense() * bmat;
  MatrixXd corr(L, L);  // corr(l, k) = b_k' X_l' res_l / n_l
  for (Index l = 0; l < L; ++l) {
    const auto ls = static_cast<std::size_t>(l);
    const VectorXd xres = xb[ls].transpose() * res[ls] / static_cast<double>(est.n_correction[ls]);
    for (Index k = 0; k < L; ++k) corr(l, k) = bmat.col(k).dot(xres);
  }
  MatrixXd g(L, L);
  for (Index l = 0; l < L; ++l)
    for (Index k = 0; k <= l; ++k) {
      g(l, k) = plug(l, k) + corr(l, k) + corr(k, l);
      g(k, l) = g(l, k);
    }
  est.gamma_hat = SymMatrix(g);

  // Noise part: the group-l correction in entry (l, k) has direction b_k.
  const Index d = vecl_length(L);
  MatrixXd v = MatrixXd::Zero(d, d);
  std::vector<MatrixXd> gram_b(static_cast<std::size_t>(L));  // B' X_l' X_l B / n_l
  for (Index l = 0; l < L; ++l) {
    const MatrixXd xbl = xb[static_cast<std::size_t>(l)] * bmat;
    gram_b[static_cast<std::size_t>(l)] = xbl.transpose() * xbl / static_cast<double>(est.n_correction[static_cast<std::size_t>(l)]);
  }
  auto noise_term = [&](Index grp, Index other1, Index l2, Index k2) {
    const auto gs = static_cast<std::size_t>(grp);
    double s = 0.0;
    if (l2 == grp) s += gram_b[gs](other1, k2);
    if (k2 == grp) s += gram_b[gs](other1, l2);
    return est.sigma_hat[gs] * est.sigma_hat[gs] / static_cast<double>(est.n_correction[gs]) * s;
  };
  for (Index a = 0; a < d; ++a) {
    const auto [l1, k1] = vecl_pair(a, L);
    for (Index c = 0; c < d; ++c) {
      const auto [l2, k2] = vecl_pair(c, L);
      v(a, c) = noise_term(l1, k1, l2, k2) + noise_term(k1, l1, l2, k2);
    }
  }
  const MatrixXd pb = pooled * bmat;
  const double nt = static_cast<double>(total);
  v += detail::fourth_moment_block(pooled, pb, plug) / (nt * nt);
  est.v_hat = SymMatrix(v);
  est.d0 = compute_d0(est.v_hat, est.n_min, t.tau0);
  return est;
}

/// Dispatches on the regime.
inline GammaEstimate estimate_gamma(const MultiSourceData& data, Regime regime, const GammaTuning& t = {}) {
  switch (regime) {
    case Regime::covshift: return gamma_hat_covshift(data, t);
    case Regime::known_sigma: return gamma_hat_known_sigma(data, t);
    case Regime::no_shift: return gamma_hat_noshift(data, t);
  }
  throw ContractError("estimate_gamma: unknown regime");
}

}  // namespace maximin
