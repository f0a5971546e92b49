#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "maximin/densenet.hpp"
#include "oracles.hpp"

using namespace maximin;

namespace {

GammaEstimate make_estimate(const MatrixXd& gamma, const MatrixXd& v, Index n_min = 100, double d0 = 1.0) {
  GammaEstimate e;
  e.gamma_hat = SymMatrix(gamma);
  e.v_hat = SymMatrix(v);
  e.n_min = n_min;
  e.d0 = d0;
  return e;
}

std::vector<FunctionalEstimate> functionals(std::initializer_list<std::pair<double, double>> vs) {
  std::vector<FunctionalEstimate> out;
  Index g = 0;
  for (const auto& [v, s] : vs) out.push_back({v, s, g++});
  return out;
}

}  // namespace

TEST(Quantiles, KnownValues) {
  EXPECT_NEAR(normal_upper_quantile(0.025), 1.959963984540054, 1e-12);
  EXPECT_NEAR(chisq_upper_quantile(1.0, 0.05), 3.841458820694124, 1e-10);
  EXPECT_NEAR(chisq_upper_quantile(3.0, 0.01), 11.344866730144373, 1e-9);
  EXPECT_THROW(normal_upper_quantile(0.0), ContractError);
}

TEST(Draws, ZeroPerturbationReproducesEstimate) {
  MatrixXd g(2, 2);
  g << 1.0, 0.3, 0.3, 2.0;
  const auto est = make_estimate(g, 0.01 * MatrixXd::Identity(3, 3));
  const std::vector<VeclVector> zero{VeclVector(2, VectorXd::Zero(3))};
  const auto draws = solve_draws(est, zero, 0.5);
  ASSERT_EQ(draws.size(), 1u);
  EXPECT_TRUE(draws[0].gamma_matrix == est.gamma_hat);
  EXPECT_LE((draws[0].weight.weights - min_quadratic_simplex(est.gamma_hat, 0.5).weights).cwiseAbs().maxCoeff(),
            0.0);
}

TEST(Draws, EmpiricalCovarianceMatchesSamplingCovariance) {
  MatrixXd v(3, 3);
  v << 0.5, 0.2, 0.0, 0.2, 0.4, -0.1, 0.0, -0.1, 0.3;
  const auto est = make_estimate(MatrixXd::Identity(2, 2), v, 10, 1.0);
  const auto s = draw_perturbations(est, 100000, RngStream(81, 0));
  MatrixXd emp = MatrixXd::Zero(3, 3);
  for (const auto& d : s) emp += d.values() * d.values().transpose();
  emp /= static_cast<double>(s.size());
  EXPECT_LE((emp - sampling_covariance(est).dense()).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_NEAR(sampling_covariance(est)(0, 0), 0.6, 1e-12);
}

TEST(Draws, IndependentOfConsumption) {
  const auto est = make_estimate(MatrixXd::Identity(2, 2), 0.1 * MatrixXd::Identity(3, 3));
  const auto a = draw_perturbations(est, 10, RngStream(82, 1));
  const auto b = draw_perturbations(est, 20, RngStream(82, 1));
  for (std::size_t m = 0; m < a.size(); ++m) EXPECT_EQ(a[m].values(), b[m].values());
}

TEST(IndexSet, DirectRule) {
  const auto est = make_estimate(MatrixXd::Identity(2, 2), 0.04 * MatrixXd::Identity(3, 3), 100, 1.0);
  const double sd = std::sqrt(0.04 + 0.01);
  const double thr = 1.1 * normal_upper_quantile(0.01 / 6.0);
  std::vector<SampledDraw> draws(2);
  draws[0].s_vec = VeclVector(2, VectorXd::Zero(3));
  VectorXd far = VectorXd::Zero(3);
  far[1] = 2.0 * thr * sd;
  draws[1].s_vec = VeclVector(2, far);
  const auto is = index_set(draws, est, 0.01);
  EXPECT_TRUE(is.mask[0]);
  EXPECT_FALSE(is.mask[1]);
  EXPECT_FALSE(is.fallback);
  EXPECT_TRUE(draws[0].in_index_set);
  EXPECT_FALSE(draws[1].in_index_set);
}

TEST(IndexSet, EmptyScreenFallsBackToLeastExtreme) {
  const auto est = make_estimate(MatrixXd::Identity(2, 2), 0.04 * MatrixXd::Identity(3, 3));
  std::vector<SampledDraw> draws(2);
  draws[0].s_vec = VeclVector(2, VectorXd::Constant(3, 50.0));
  draws[1].s_vec = VeclVector(2, VectorXd::Constant(3, 20.0));
  const auto is = index_set(draws, est, 0.01);
  EXPECT_TRUE(is.fallback);
  EXPECT_EQ(is.size(), 1u);
  EXPECT_TRUE(is.mask[1]);
}

TEST(IndexSet, InclusionRateMatchesOrthantOracle) {
  // Independent coordinates: P(all |Z| <= c) = (2 Phi(c) - 1)^d.
  const auto est = make_estimate(MatrixXd::Identity(2, 2), 0.04 * MatrixXd::Identity(3, 3));
  for (double alpha0 : {0.01, 0.05}) {
    auto draws = draw_samples(est, 10000, 0.0, RngStream(83, 0));
    const auto is = index_set(draws, est, alpha0);
    const double rate = static_cast<double>(is.size()) / 10000.0;
    const double expected = oracle::orthant_probability(1.1 * normal_upper_quantile(alpha0 / 6.0), 3);
    EXPECT_NEAR(rate, expected, 0.02);
    EXPECT_EQ(is.alpha0_warning, alpha0 > 0.01);
  }
  auto draws = draw_samples(est, 10000, 0.0, RngStream(84, 0));
  const auto is = index_set(draws, est, 0.05, IndexSetRule::chisq);
  const double expected =
      boost::math::cdf(boost::math::chi_squared(3.0), 1.1 * chisq_upper_quantile(3.0, 0.05));
  EXPECT_NEAR(static_cast<double>(is.size()) / 10000.0, expected, 0.02);
  EXPECT_THROW(index_set(draws, est, 0.1), ContractError);
}

TEST(SampledInterval, SingleGroupReduction) {
  const auto f = functionals({{1.5, 0.2}, {-3.0, 0.7}});
  const Interval iv = sampled_interval(VectorXd::Unit(2, 0), f, 0.01, 0.05);
  const double half = 1.01 * normal_upper_quantile(0.025) * 0.2;
  EXPECT_NEAR(iv.lower, 1.5 - half, 1e-14);
  EXPECT_NEAR(iv.upper, 1.5 + half, 1e-14);
}

TEST(SampledInterval, EqualWeightsEqualSe) {
  const auto f = functionals({{0.0, 0.3}, {0.0, 0.3}, {0.0, 0.3}, {0.0, 0.3}});
  const Interval iv = sampled_interval(VectorXd::Constant(4, 0.25), f, 0.0, 0.05);
  EXPECT_NEAR(iv.length() / 2.0, normal_upper_quantile(0.025) * 0.3 / 2.0, 1e-14);
  EXPECT_THROW(sampled_interval(VectorXd::Constant(3, 1.0 / 3), f), ContractError);
}

TEST(Aggregate, MergeExamples) {
  const auto one = aggregate_ci({{0.0, 1.0}}, 0.5);
  EXPECT_EQ(one.union_components.size(), 1u);
  EXPECT_EQ(one.hull.lower, 0.0);
  EXPECT_EQ(one.hull.upper, 1.0);

  const auto overlap = aggregate_ci({{0.5, 2.0}, {0.0, 1.0}}, 1.0);
  EXPECT_EQ(overlap.union_components.size(), 1u);
  EXPECT_EQ(overlap.hull.lower, 0.0);
  EXPECT_EQ(overlap.hull.upper, 2.0);
  EXPECT_FALSE(overlap.has_gap());

  const auto gap = aggregate_ci({{3.0, 4.0}, {0.0, 1.0}}, 0.5);
  EXPECT_EQ(gap.union_components.size(), 2u);
  EXPECT_EQ(gap.hull.lower, 0.0);
  EXPECT_EQ(gap.hull.upper, 4.0);
  EXPECT_TRUE(gap.has_gap());
  EXPECT_TRUE(test_null(gap, 2.0));
  EXPECT_FALSE(test_null(gap, 3.5));
  EXPECT_FALSE(test_null(gap, 1.0));
  EXPECT_THROW(aggregate_ci({}, 0.0), ContractError);
}

TEST(Aggregate, RandomMergeCoversExactlyTheUnion) {
  RngStream rng(85, 0);
  for (int t = 0; t < 50; ++t) {
    std::vector<Interval> ivs;
    for (int i = 0; i < 8; ++i) {
      const double a = 10.0 * rng.uniform();
      ivs.push_back({a, a + rng.uniform()});
    }
    const auto m = merge_intervals(ivs);
    for (std::size_t i = 1; i < m.size(); ++i) EXPECT_GT(m[i].lower, m[i - 1].upper);
    for (int k = 0; k < 200; ++k) {
      const double v = 11.0 * rng.uniform();
      bool in_any = false, in_merged = false;
      for (const auto& iv : ivs) in_any = in_any || iv.contains(v);
      for (const auto& iv : m) in_merged = in_merged || iv.contains(v);
      EXPECT_EQ(in_any, in_merged);
    }
  }
}

TEST(DenseNet, ZeroDrawGivesSingleInterval) {
  MatrixXd g(2, 2);
  g << 1.0, 0.2, 0.2, 1.5;
  const auto est = make_estimate(g, 0.01 * MatrixXd::Identity(3, 3));
  const auto f = functionals({{1.0, 0.1}, {2.0, 0.2}});
  const std::vector<VeclVector> zero{VeclVector(2, VectorXd::Zero(3))};
  DenseNetParams prm;
  const auto ci = densenet_ci(est, f, zero, prm);
  const Interval iv = sampled_interval(min_quadratic_simplex(est.gamma_hat).weights, f);
  EXPECT_EQ(ci.union_components.size(), 1u);
  EXPECT_DOUBLE_EQ(ci.hull.lower, iv.lower);
  EXPECT_DOUBLE_EQ(ci.hull.upper, iv.upper);
  EXPECT_FALSE(test_null(ci, ci.point_estimate));
}

TEST(DenseNet, HullContainsEveryIntervalAndPoint) {
  RngStream rng(86, 0);
  for (int t = 0; t < 10; ++t) {
    const MatrixXd g = oracle::random_psd(3, rng) + 0.1 * MatrixXd::Identity(3, 3);
    const MatrixXd v = 0.01 * oracle::random_psd(6, rng);
    const auto est = make_estimate(g, v);
    const auto f = functionals({{rng.normal(), 0.1}, {rng.normal(), 0.1}, {rng.normal(), 0.1}});
    DenseNetParams prm;
    prm.M = 300;
    const auto ci = densenet_ci(est, f, prm, rng.substream(static_cast<std::uint64_t>(t)));
    for (const auto& iv : ci.intervals) {
      EXPECT_LE(ci.hull.lower, iv.lower);
      EXPECT_GE(ci.hull.upper, iv.upper);
    }
    EXPECT_FALSE(test_null(ci, ci.point_estimate));
  }
}

TEST(Instability, PinnedWeightIsStable) {
  MatrixXd g = MatrixXd::Zero(2, 2);
  g.diagonal() << 1.0, 100.0;
  const auto est = make_estimate(g, 1e-4 * MatrixXd::Identity(3, 3), 1000, 1.0);
  EXPECT_LT(instability_measure(est, 0.0, 500, RngStream(87, 0)), 1e-3);
}

TEST(Instability, LargeRidgeDamps) {
  RngStream rng(88, 0);
  for (int t = 0; t < 10; ++t) {
    const MatrixXd g = oracle::random_psd(3, rng, 2);
    const auto est = make_estimate(g, 0.05 * MatrixXd::Identity(6, 6));
    const auto s = draw_perturbations(est, 300, rng.substream(static_cast<std::uint64_t>(t)));
    EXPECT_LE(instability_measure(est, 1000.0, s), instability_measure(est, 0.5, s) + 1e-12);
  }
}

TEST(Instability, ZeroDenominator) {
  const auto est = make_estimate(MatrixXd::Identity(2, 2), MatrixXd::Zero(3, 3));
  const std::vector<VeclVector> zero{VeclVector(2, VectorXd::Zero(3))};
  EXPECT_EQ(instability_measure(est, 0.0, zero), 0.0);
}

TEST(SelectDelta, StableInstanceStaysAtZero) {
  MatrixXd g = MatrixXd::Zero(2, 2);
  g.diagonal() << 1.0, 100.0;
  const auto est = make_estimate(g, 1e-4 * MatrixXd::Identity(3, 3), 1000, 1.0);
  const std::vector<double> grid{0.0, 0.5, 1.0, 2.0};
  const auto s = draw_perturbations(est, 200, RngStream(89, 0));
  const auto sel = select_delta_detail(est, grid, s);
  EXPECT_LT(sel.instability0, 0.5);
  EXPECT_EQ(sel.delta, 0.0);
}

TEST(SelectDelta, FlatRewardTakesLargestGridValue) {
  const auto est = make_estimate(MatrixXd::Identity(2, 2), 0.01 * MatrixXd::Identity(3, 3));
  const std::vector<double> grid{0.0, 0.5, 1.0, 2.0};
  const auto s = draw_perturbations(est, 100, RngStream(90, 0));
  const auto sel = select_delta_detail(est, grid, s, 0.95, 0.0);
  EXPECT_EQ(sel.delta, 2.0);
  for (double r : sel.reward_ratio) EXPECT_NEAR(r, 1.0, 1e-12);
}

TEST(SelectDelta, UnstableInstancePicksTwo) {
  MatrixXd g(2, 2);
  g << 1.0, 0.98, 0.98, 1.02;
  const auto est = make_estimate(g, 0.01 * MatrixXd::Identity(3, 3), 100, 1.0);
  const std::vector<double> grid{0.0, 0.1, 0.5, 1.0, 2.0};
  const auto s = draw_perturbations(est, 300, RngStream(91, 0));
  const auto sel = select_delta_detail(est, grid, s);
  EXPECT_GT(sel.instability0, 0.5);
  EXPECT_EQ(sel.delta, 2.0);
  EXPECT_EQ(select_delta(est, grid, 300, RngStream(91, 0)), 2.0);
}

TEST(SelectDelta, Contracts) {
  const auto est = make_estimate(MatrixXd::Identity(2, 2), 0.01 * MatrixXd::Identity(3, 3));
  const auto s = draw_perturbations(est, 10, RngStream(92, 0));
  const std::vector<double> no_zero{0.5, 1.0};
  const std::vector<double> too_big{0.0, 3.0};
  EXPECT_THROW(select_delta_detail(est, no_zero, s), ContractError);
  EXPECT_THROW(select_delta_detail(est, too_big, s), ContractError);
}
