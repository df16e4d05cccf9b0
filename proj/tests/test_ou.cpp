#include "oujm/ou.hpp"

#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "oujm/rng.hpp"
#include "oujm/smallmat.hpp"

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

MatrixXd setting1_theta() {
  MatrixXd t(2, 2);
  t << 1.8, 0.4, 1.5, 1.2;
  return t;
}

MatrixXd setting2_theta() {
  MatrixXd t(2, 2);
  t << 2.4, 0.4, 0.8, 2.0;
  return t;
}

VectorXd scalar_rho(double r) {
  VectorXd rho(1);
  rho(0) = r;
  return rho;
}

}  // namespace

TEST_SUITE("ou") {

TEST_CASE("constraints_ok trace and determinant") {
  const auto c1 = oujm::constraints_ok(setting1_theta());
  CHECK(c1.v1 == doctest::Approx(3.0));
  CHECK(c1.v2 == doctest::Approx(1.56));
  CHECK(c1.ok);

  MatrixXd bad_det(2, 2);
  bad_det << 1.0, 2.0, 2.0, 1.0;
  const auto c2 = oujm::constraints_ok(bad_det);
  CHECK(c2.v1 == doctest::Approx(2.0));
  CHECK(c2.v2 == doctest::Approx(-3.0));
  CHECK_FALSE(c2.ok);

  const auto c3 = oujm::constraints_ok(-MatrixXd::Identity(2, 2));
  CHECK(c3.v1 == doctest::Approx(-2.0));
  CHECK_FALSE(c3.ok);

  CHECK_THROWS_AS(oujm::constraints_ok(MatrixXd::Identity(3, 3)),
                  oujm::DimensionError);
}

TEST_CASE("to_correlation_param reproduces the reported correlations") {
  MatrixXd s1 = Vector2d(1.76, 0.71).asDiagonal();
  const auto p1 = oujm::to_correlation_param(setting1_theta(), s1);
  CHECK((*p1.rho)(0) == doctest::Approx(-0.633).epsilon(0.0016));

  MatrixXd s2 = Vector2d(2.14, 1.89).asDiagonal();
  const auto p2 = oujm::to_correlation_param(setting2_theta(), s2);
  CHECK((*p2.rho)(0) == doctest::Approx(-0.273).epsilon(0.0037));

  MatrixXd diag_sigma = (std::sqrt(2.0) * MatrixXd::Identity(2, 2)).eval();
  const auto p3 = oujm::to_correlation_param(MatrixXd::Identity(2, 2), diag_sigma);
  CHECK((*p3.rho)(0) == doctest::Approx(0.0));
  CHECK(p3.marginal_sd(0) == doctest::Approx(1.0));
}

TEST_CASE("to_volatility_param basics and near-paper sigma") {
  const auto iso =
      oujm::to_volatility_param(MatrixXd::Identity(2, 2), scalar_rho(0.0));
  CHECK((*iso.sigma - std::sqrt(2.0) * MatrixXd::Identity(2, 2)).norm() < 1e-12);

  const auto s1 =
      oujm::to_volatility_param(setting1_theta(), scalar_rho(-0.633));
  CHECK((*s1.sigma)(0, 0) == doctest::Approx(1.76).epsilon(1e-2));
  CHECK((*s1.sigma)(1, 1) == doctest::Approx(0.71).epsilon(1e-2));
}

TEST_CASE("parameterization round trip is the identity") {
  oujm::Rng rng(2024);
  for (int rep = 0; rep < 100; ++rep) {
    const MatrixXd theta = oracle::random_constrained_theta(rng);
    const double r = (rep == 0) ? 0.4 : rng.uniform(-0.95, 0.95);
    oujm::OUParams vol;
    try {
      vol = oujm::to_volatility_param(theta, scalar_rho(r));
    } catch (const oujm::ConstraintError&) {
      continue;  // indefinite theta V + V theta^T: rejected input, not a bug
    }
    const auto back = oujm::to_correlation_param(theta, *vol.sigma);
    CHECK((*back.rho)(0) == doctest::Approx(r).epsilon(1e-10));
    CHECK(back.marginal_sd(0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(back.marginal_sd(1) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("volatility -> correlation -> volatility uses recorded SDs") {
  oujm::Rng rng(99);
  for (int rep = 0; rep < 100; ++rep) {
    const MatrixXd theta = oracle::random_constrained_theta(rng);
    MatrixXd l = MatrixXd::Zero(2, 2);
    l(0, 0) = rng.uniform(0.2, 2.5);
    l(1, 0) = rng.uniform(-1.5, 1.5);
    l(1, 1) = rng.uniform(0.2, 2.5);
    const auto corr = oujm::to_correlation_param(theta, l);
    const auto back = oujm::to_volatility_param(corr);
    CHECK((*back.sigma - l).norm() < 1e-10);
  }
}

TEST_CASE("conditional law at the extremes") {
  const auto params =
      oujm::make_correlation_params(setting1_theta(), scalar_rho(-0.633));
  const auto at0 = oujm::conditional(params, 0.0);
  CHECK((at0.mean_map - MatrixXd::Identity(2, 2)).norm() < 1e-14);
  CHECK(at0.cond_cov.norm() < 1e-14);

  const auto far = oujm::conditional(params, 1e6);
  CHECK((far.cond_cov - oujm::stationary_cov(params)).norm() < 1e-8);
  CHECK(far.mean_map.norm() < 1e-10);

  CHECK_THROWS_AS(oujm::conditional(params, -0.1), oujm::DomainError);
}

TEST_CASE("conditional covariance matches an Euler-Maruyama oracle") {
  const auto params =
      oujm::make_correlation_params(setting2_theta(), scalar_rho(-0.273));
  const auto cond = oujm::conditional(params, 0.5);
  const MatrixXd sigma = *oujm::to_volatility_param(params).sigma;

  oujm::Rng rng(55001);
  const Vector2d start(0.3, -0.2);
  const int n = 50000;
  std::vector<VectorXd> ends;
  ends.reserve(n);
  for (int i = 0; i < n; ++i)
    ends.push_back(oracle::euler_ou_endpoint(setting2_theta(), sigma, start,
                                             0.5, 2.5e-4, rng));
  const auto mom = oracle::moments(ends);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double se =
          std::sqrt((mom.cov(i, i) * mom.cov(j, j) + mom.cov(i, j) * mom.cov(i, j)) / n);
      CHECK(std::abs(mom.cov(i, j) - cond.cond_cov(i, j)) < 3.0 * se + 2e-3);
    }
  const Vector2d want_mean = cond.mean_map * start;
  for (int i = 0; i < 2; ++i)
    CHECK(std::abs(mom.mean(i) - want_mean(i)) <
          3.0 * std::sqrt(mom.cov(i, i) / n) + 2e-3);
}

TEST_CASE("marginal cross covariance") {
  const auto params =
      oujm::make_correlation_params(setting1_theta(), scalar_rho(-0.633));
  const MatrixXd v = oujm::stationary_cov(params);
  CHECK((oujm::marginal_cross_cov(params, 0.0) - v).norm() < 1e-12);
  CHECK(oujm::marginal_cross_cov(params, 1e3).norm() < 1e-10);

  const MatrixXd want = v * oracle::taylor_matexp(-setting1_theta().transpose(), 60);
  CHECK((oujm::marginal_cross_cov(params, 1.0) - want).norm() < 1e-10);
}

TEST_CASE("path_logpdf simple cases") {
  const auto iso =
      oujm::make_correlation_params(MatrixXd::Identity(2, 2), scalar_rho(0.0));
  VectorXd t1(1);
  t1 << 0.0;
  const double one_point = oujm::path_logpdf(iso, t1, MatrixXd::Zero(2, 1));
  CHECK(one_point == doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-9));

  VectorXd t2(2);
  t2 << 0.0, 60.0;
  const double two_far = oujm::path_logpdf(iso, t2, MatrixXd::Zero(2, 2));
  CHECK(two_far == doctest::Approx(2.0 * one_point).epsilon(1e-8));

  VectorXd bad(2);
  bad << 1.0, 1.0;
  CHECK_THROWS_AS(oujm::path_logpdf(iso, bad, MatrixXd::Zero(2, 2)),
                  oujm::OrderingError);
}

TEST_CASE("path_logpdf equals the dense joint-Gaussian density") {
  const auto params =
      oujm::make_correlation_params(setting1_theta(), scalar_rho(-0.633));
  const MatrixXd v = oujm::stationary_cov(params);
  VectorXd times(3);
  times << 0.0, 0.7, 1.9;
  oujm::Rng rng(717);
  MatrixXd path(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) path(i, j) = rng.normal();

  MatrixXd joint = MatrixXd::Zero(6, 6);
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) {
      const MatrixXd block =
          v * oracle::taylor_matexp(-setting1_theta().transpose() *
                                    (times(b) - times(a)), 60);
      joint.block(2 * a, 2 * b, 2, 2) = block;
      if (b > a) joint.block(2 * b, 2 * a, 2, 2) = block.transpose();
    }
  VectorXd stacked(6);
  for (int j = 0; j < 3; ++j) stacked.segment(2 * j, 2) = path.col(j);

  const double want = oracle::dense_mvn_logpdf(stacked, joint);
  const double got = oujm::path_logpdf(params, times, path);
  CHECK(got == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("path_logpdf marginalization consistency") {
  // Integrating the 3-point density over the middle point recovers the
  // 2-point density.
  const auto params =
      oujm::make_correlation_params(setting1_theta(), scalar_rho(-0.4));
  VectorXd t2(2), t3(3);
  t2 << 0.0, 1.5;
  t3 << 0.0, 0.7, 1.5;
  MatrixXd ends(2, 2);
  ends << 0.4, -0.3, -0.8, 0.6;

  const double direct = oujm::path_logpdf(params, t2, ends);

  const int n = 160;
  const double lo = -6.0, hi = 6.0;
  const double h = (hi - lo) / n;
  double integral = 0.0;
  MatrixXd path3(2, 3);
  path3.col(0) = ends.col(0);
  path3.col(2) = ends.col(1);
  for (int a = 0; a <= n; ++a)
    for (int b = 0; b <= n; ++b) {
      path3(0, 1) = lo + a * h;
      path3(1, 1) = lo + b * h;
      const double w = ((a == 0 || a == n) ? 0.5 : 1.0) *
                       ((b == 0 || b == n) ? 0.5 : 1.0);
      integral += w * std::exp(oujm::path_logpdf(params, t3, path3));
    }
  integral *= h * h;
  CHECK(std::log(integral) == doctest::Approx(direct).epsilon(1e-3));
}

TEST_CASE("whiten and unwhiten are mutually inverse") {
  const auto params =
      oujm::make_correlation_params(setting2_theta(), scalar_rho(-0.273));
  VectorXd times(5);
  times << 0.0, 0.3, 0.35, 2.0, 2.8;
  oujm::Rng rng(10301);
  MatrixXd z(2, 5);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) z(i, j) = rng.normal();

  CHECK(oujm::unwhiten(params, times, MatrixXd::Zero(2, 5)).norm() == 0.0);
  const MatrixXd path = oujm::unwhiten(params, times, z);
  const MatrixXd back = oujm::whiten(params, times, path);
  CHECK((back - z).norm() < 1e-10);
}

TEST_CASE("unwhitened single steps reproduce the conditional covariance") {
  const auto params =
      oujm::make_correlation_params(setting2_theta(), scalar_rho(-0.273));
  const double dt = 0.8;
  const auto cond = oujm::conditional(params, dt);
  VectorXd times(2);
  times << 0.0, dt;

  oujm::Rng rng(888);
  const Vector2d z0(0.7, -0.3);
  const int n = 100000;
  std::vector<VectorXd> cols;
  cols.reserve(n);
  MatrixXd z(2, 2);
  z.col(0) = z0;
  for (int i = 0; i < n; ++i) {
    z(0, 1) = rng.normal();
    z(1, 1) = rng.normal();
    cols.push_back(oujm::unwhiten(params, times, z).col(1));
  }
  const auto mom = oracle::moments(cols);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt(
          (mom.cov(i, i) * mom.cov(j, j) + mom.cov(i, j) * mom.cov(i, j)) / n);
      CHECK(std::abs(mom.cov(i, j) - cond.cond_cov(i, j)) < 3.0 * se + 1e-4);
    }
}

TEST_CASE("stationary covariance of converted parameters has unit diagonal") {
  oujm::Rng rng(3131);
  for (int rep = 0; rep < 100; ++rep) {
    const MatrixXd theta = oracle::random_constrained_theta(rng);
    oujm::OUParams vol;
    try {
      vol = oujm::to_volatility_param(theta, scalar_rho(rng.uniform(-0.9, 0.9)));
    } catch (const oujm::ConstraintError&) {
      continue;
    }
    const MatrixXd v = oujm::stationary_cov(vol);
    CHECK(std::abs(v(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(v(1, 1) - 1.0) < 1e-12);
  }
}

TEST_CASE("conditional covariance stays positive semidefinite across scales") {
  const auto params =
      oujm::make_correlation_params(setting1_theta(), scalar_rho(-0.633));
  for (double logdt = -4.0; logdt <= 3.0; logdt += 0.25) {
    const auto cond = oujm::conditional(params, std::pow(10.0, logdt));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cond.cond_cov);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("Chapman-Kolmogorov composition of mean maps") {
  const auto params =
      oujm::make_correlation_params(setting2_theta(), scalar_rho(-0.273));
  oujm::Rng rng(606);
  for (int rep = 0; rep < 50; ++rep) {
    const double dt1 = rng.uniform(0.0, 3.0);
    const double dt2 = rng.uniform(0.0, 3.0);
    const MatrixXd composed = oujm::conditional(params, dt2).mean_map *
                              oujm::conditional(params, dt1).mean_map;
    const MatrixXd direct = oujm::conditional(params, dt1 + dt2).mean_map;
    CHECK((composed - direct).norm() < 1e-10);
  }
}

}  // TEST_SUITE
