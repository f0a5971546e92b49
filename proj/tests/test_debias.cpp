#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include "maximin/debias.hpp"
#include "oracles.hpp"

using namespace maximin;

namespace {

MatrixXd orthonormal_design(Index n, Index p, RngStream& rng) {
  const Eigen::HouseholderQR<MatrixXd> qr(oracle::random_matrix(n, p, rng));
  return MatrixXd(qr.householderQ()).leftCols(p) * std::sqrt(static_cast<double>(n));
}

// Feasible set of the projection problem written as |A u - c| <= r.
void constraint_system(const MatrixXd& s, const VectorXd& w, double mu, MatrixXd& a, VectorXd& c, VectorXd& r) {
  const Index p = s.rows();
  const double nw = w.norm();
  a.resize(p + 1, p);
  a.row(0) = (s * w).transpose();
  a.bottomRows(p) = s;
  c.resize(p + 1);
  c[0] = w.squaredNorm();
  c.tail(p) = w;
  r = VectorXd::Constant(p + 1, nw * mu);
  r[0] = nw * nw * mu;
}

}  // namespace

TEST(Projection, OrthonormalDesignZeroToleranceGivesLoading) {
  RngStream rng(41, 0);
  const MatrixXd x = orthonormal_design(50, 6, rng);
  const VectorXd x_new = oracle::random_vector(6, rng);
  const auto v = projection_direction_linear(x, x_new, 0.0, 100.0);
  EXPECT_LE((v.direction - x_new).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Projection, SmallToleranceApproachesInverse) {
  RngStream rng(42, 0);
  const MatrixXd x = oracle::random_matrix(200, 5, rng);
  const VectorXd x_new = oracle::random_vector(5, rng);
  const SymMatrix s = gram(x);
  const VectorXd exact = s.dense().ldlt().solve(x_new);
  const auto v = projection_direction_linear(x, x_new, 1e-6 * x_new.norm(), 1e6);
  EXPECT_LE((v.direction - exact).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Projection, SlacksWithinBounds) {
  RngStream rng(43, 0);
  for (int t = 0; t < 20; ++t) {
    const Index n = 60, p = 30 + 10 * (t % 4);
    const MatrixXd x = oracle::random_matrix(n, p, rng);
    const VectorXd w = oracle::random_vector(p, rng);
    const double mu = default_mu(n, p);
    const auto u = projection_direction_gamma(gram(x), w, mu, default_tau(n), &x);
    EXPECT_TRUE(u.feasibility.within_bounds(1e-8));
    EXPECT_GE(u.penalty, mu);
    EXPECT_TRUE(u.feasibility.sup_norm.has_value());
  }
}

TEST(Projection, GammaDirectionApproachesInverse) {
  RngStream rng(53, 0);
  const MatrixXd x = oracle::random_matrix(300, 8, rng);
  const SymMatrix s = gram(x);
  const VectorXd w = oracle::random_vector(8, rng);
  const VectorXd exact = s.dense().ldlt().solve(w);
  const auto u = projection_direction_gamma(s, w, 1e-7, 1e6);
  EXPECT_LE((u.direction - exact).norm() / exact.norm(), 1e-3);
}

TEST(Projection, IdentityCovarianceZeroPenalty) {
  RngStream rng(44, 0);
  const VectorXd w = oracle::random_vector(7, rng);
  const auto u = solve_projection(SymMatrix::identity(7), w, 0.0);
  EXPECT_LE((u.direction - w).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(u.escalations, 0);
}

TEST(Projection, MatchesPrimalAdmmOracle) {
  RngStream rng(45, 0);
  for (Index p : {5, 15, 40, 60}) {
    const Index n = 100;
    const MatrixXd x = oracle::random_matrix(n, p, rng);
    const SymMatrix s = gram(x);
    const VectorXd w = oracle::random_vector(p, rng);
    const double mu = 0.15;
    const auto u = solve_projection(s, w, mu);
    ASSERT_EQ(u.escalations, 0);
    MatrixXd a;
    VectorXd c, r;
    constraint_system(s.dense(), w, mu, a, c, r);
    const VectorXd ref = oracle::admm_box_qp(s.dense(), a, c, r, 100000, 1.0, 1e-10);
    const double ref_obj = ref.dot(s.dense() * ref);
    EXPECT_NEAR(u.variance_term, ref_obj, 0.01 * ref_obj) << "p=" << p;
  }
}

TEST(Projection, LinearInLoading) {
  RngStream rng(46, 0);
  const MatrixXd x = oracle::random_matrix(40, 25, rng);
  const SymMatrix s = gram(x);
  const VectorXd w = oracle::random_vector(25, rng);
  const auto u1 = solve_projection(s, w, 0.2);
  const auto u3 = solve_projection(s, 3.0 * w, 0.2);
  EXPECT_LE((u3.direction - 3.0 * u1.direction).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Projection, BasisVectorLoadingDropsDuplicateConstraint) {
  RngStream rng(47, 0);
  const MatrixXd x = oracle::random_matrix(80, 10, rng);
  VectorXd e = VectorXd::Zero(10);
  e[3] = 2.0;
  const auto u = solve_projection(gram(x), e, 0.1);
  EXPECT_FALSE(u.feasibility.has_loading_constraint);
  EXPECT_EQ(u.feasibility.slacks.size(), 10u);
  EXPECT_TRUE(u.feasibility.within_bounds());
}

TEST(Projection, Contracts) {
  EXPECT_THROW(solve_projection(SymMatrix::identity(3), VectorXd::Zero(3), 0.1), ContractError);
  EXPECT_THROW(solve_projection(SymMatrix::identity(3), VectorXd::Ones(2), 0.1), ContractError);
  EXPECT_THROW(solve_projection(SymMatrix::identity(3), VectorXd::Ones(3), -0.1), ContractError);
}

TEST(ProjectionLowdim, Examples) {
  const VectorXd w = (VectorXd(2) << 1, 2).finished();
  const auto u = projection_direction_lowdim(SymMatrix::identity(2), w);
  EXPECT_NEAR(u.direction[0], 1.0, 1e-14);
  EXPECT_NEAR(u.direction[1], 2.0, 1e-14);
  MatrixXd d(2, 2);
  d << 2, 0, 0, 4;
  const auto u2 = projection_direction_lowdim(SymMatrix(d), w);
  EXPECT_NEAR(u2.direction[0], 0.5, 1e-14);
  EXPECT_NEAR(u2.direction[1], 0.5, 1e-14);
  const auto u3 = projection_direction_lowdim(SymMatrix(MatrixXd(2.0 * MatrixXd::Identity(2, 2))), w);
  EXPECT_LE((u3.direction - 0.5 * w).cwiseAbs().maxCoeff(), 1e-15);
  RngStream rng(52, 0);
  const SymMatrix spd(oracle::random_psd(10, rng) + 0.1 * MatrixXd::Identity(10, 10));
  const VectorXd om = oracle::random_vector(10, rng);
  EXPECT_LE((spd.dense() * projection_direction_lowdim(spd, om).direction - om).norm(), 1e-8);
  MatrixXd sing(2, 2);
  sing << 1, 1, 1, 1;
  EXPECT_THROW(projection_direction_lowdim(SymMatrix(sing), w), SingularError);
}

TEST(DebiasedFunctional, NoiselessIsExact) {
  RngStream rng(48, 0);
  const MatrixXd x = oracle::random_matrix(100, 30, rng);
  VectorXd b = VectorXd::Zero(30);
  b.head(4) << 1, -1, 2, 0.5;
  const VectorXd y = x * b;
  const VectorXd x_new = oracle::random_vector(30, rng);
  const auto fit = lasso_fit(x, y, 1e-4);
  const auto v = projection_direction_linear(x, x_new, default_eta(100, 30, x_new), default_tau(100));
  const auto est = debiased_linear_functional(x, y, fit.coefficients, v, x_new, fit.noise_sd);
  EXPECT_NEAR(est.value, x_new.dot(b), 1e-3);
}

TEST(DebiasedFunctional, LowdimEqualsOls) {
  RngStream rng(49, 0);
  const MatrixXd x = oracle::random_matrix(200, 6, rng);
  const VectorXd y = oracle::random_vector(200, rng);
  const VectorXd x_new = oracle::random_vector(6, rng);
  const VectorXd ols = x.colPivHouseholderQr().solve(y);
  const auto v = projection_direction_lowdim(gram(x), x_new);
  // Any starting point: the exact direction removes the bias completely.
  const auto est = debiased_linear_functional(x, y, VectorXd::Zero(6), v, x_new, 1.0);
  EXPECT_NEAR(est.value, x_new.dot(ols), 1e-10);
}

TEST(DebiasedFunctional, ZeroDirectionIsPlugIn) {
  RngStream rng(50, 0);
  const MatrixXd x = oracle::random_matrix(30, 4, rng);
  const VectorXd y = oracle::random_vector(30, rng);
  const VectorXd b = oracle::random_vector(4, rng);
  const VectorXd x_new = oracle::random_vector(4, rng);
  const auto est = debiased_linear_functional(x, y, b, VectorXd::Zero(4), x_new, 1.3, 2);
  EXPECT_DOUBLE_EQ(est.value, x_new.dot(b));
  EXPECT_EQ(est.se, 0.0);
  EXPECT_EQ(est.group, 2);
  EXPECT_THROW(debiased_linear_functional(x, y, b, VectorXd::Zero(4), x_new, -1.0), ContractError);
}

TEST(DebiasedFunctional, CoverageMonteCarlo) {
  const Index n = 300, p = 100;
  const double z = boost::math::quantile(boost::math::complement(boost::math::normal(), 0.025));
  int covered = 0;
  const int reps = 500;
  VectorXd b = VectorXd::Zero(p);
  b.head(5) << 1, -0.8, 0.6, 0.5, -0.4;
  VectorXd x_new = VectorXd::Zero(p);
  x_new.head(3) << 1, 0.5, -0.5;
  const double truth = x_new.dot(b);
  for (int r = 0; r < reps; ++r) {
    RngStream rng(51, static_cast<std::uint64_t>(r));
    const MatrixXd x = oracle::random_matrix(n, p, rng);
    const VectorXd y = x * b + oracle::random_vector(n, rng);
    const auto fit = lasso_fit(x, y, default_lambda(n, p, 1.0));
    const double sigma = (y - x * fit.coefficients).norm() / std::sqrt(static_cast<double>(n));
    const auto v = projection_direction_linear(x, x_new, default_eta(n, p, x_new), default_tau(n));
    const auto est = debiased_linear_functional(x, y, fit.coefficients, v, x_new, sigma);
    covered += std::abs(est.value - truth) <= z * est.se ? 1 : 0;
  }
  const double cov = static_cast<double>(covered) / reps;
  EXPECT_GE(cov, 0.92);
  EXPECT_LE(cov, 0.98);
}

TEST(DefaultTuning, Values) {
  EXPECT_NEAR(default_mu(100, 100), 0.5 * std::sqrt(std::log(100.0) / 100.0), 1e-15);
  EXPECT_NEAR(default_tau(100), 2.0 * std::sqrt(std::log(100.0)), 1e-15);
  const VectorXd x_new = (VectorXd(2) << 3, 4).finished();
  EXPECT_NEAR(default_eta(100, 100, x_new), 5.0 * default_mu(100, 100), 1e-15);
}
