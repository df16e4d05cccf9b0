#include "oujm/hmc.hpp"

#include <cmath>

#include "doctest.h"
#include "oujm/rng.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

oujm::Target std_gaussian(int dim) {
  oujm::Target t;
  t.dim = dim;
  t.value = [](const VectorXd& x) { return -0.5 * x.squaredNorm(); };
  t.value_grad = [](const VectorXd& x, VectorXd& g) {
    g = -x;
    return -0.5 * x.squaredNorm();
  };
  return t;
}

oujm::Target correlated_gaussian(double rho) {
  // Bivariate normal with unit variances and correlation rho.
  oujm::Target t;
  t.dim = 2;
  const double det = 1.0 - rho * rho;
  t.value_grad = [rho, det](const VectorXd& x, VectorXd& g) {
    g.resize(2);
    g(0) = -(x(0) - rho * x(1)) / det;
    g(1) = -(x(1) - rho * x(0)) / det;
    return -0.5 * (x(0) * x(0) - 2.0 * rho * x(0) * x(1) + x(1) * x(1)) / det;
  };
  t.value = [&t](const VectorXd& x) {
    VectorXd g;
    return t.value_grad(x, g);
  };
  return t;
}

// Funnel: v ~ N(0, 3^2), x_i | v ~ N(0, e^v), i = 1..9.
oujm::Target funnel() {
  oujm::Target t;
  t.dim = 10;
  t.value_grad = [](const VectorXd& q, VectorXd& g) {
    const double v = q(0);
    const double ev = std::exp(-v);
    g.resize(10);
    double lp = -0.5 * v * v / 9.0 - 0.5 * 9.0 * v;
    g(0) = -v / 9.0 - 0.5 * 9.0;
    for (int i = 1; i < 10; ++i) {
      lp += -0.5 * q(i) * q(i) * ev;
      g(i) = -q(i) * ev;
      g(0) += 0.5 * q(i) * q(i) * ev;
    }
    return lp;
  };
  t.value = [&t](const VectorXd& x) {
    VectorXd g;
    return t.value_grad(x, g);
  };
  return t;
}

oujm::SamplerConfig gaussian_config(int dim, int iters, int warmup,
                                    std::uint64_t seed) {
  oujm::SamplerConfig c;
  c.chains = 1;
  c.iterations = iters;
  c.warmup = warmup;
  c.seed = seed;
  c.init = VectorXd::Zero(dim);
  c.max_leapfrog = 16;
  return c;
}

}  // namespace

TEST_SUITE("hmc") {

TEST_CASE("recovers a 10-dimensional standard Gaussian") {
  const auto target = std_gaussian(10);
  auto config = gaussian_config(10, 5000, 1000, 11);
  const auto draws = oujm::sample(config, target);
  const MatrixXd& d = draws.chains[0].draws;
  REQUIRE(d.rows() == 4000);
  for (int j = 0; j < 10; ++j) {
    const double mean = d.col(j).mean();
    const double var = (d.col(j).array() - mean).square().sum() / (d.rows() - 1);
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);
  }
}

TEST_CASE("recovers a strong correlation") {
  const auto target = correlated_gaussian(0.9);
  auto config = gaussian_config(2, 6000, 1000, 12);
  const auto draws = oujm::sample(config, target);
  const MatrixXd& d = draws.chains[0].draws;
  const double m0 = d.col(0).mean(), m1 = d.col(1).mean();
  double c00 = 0, c11 = 0, c01 = 0;
  for (int i = 0; i < d.rows(); ++i) {
    c00 += (d(i, 0) - m0) * (d(i, 0) - m0);
    c11 += (d(i, 1) - m1) * (d(i, 1) - m1);
    c01 += (d(i, 0) - m0) * (d(i, 1) - m1);
  }
  CHECK(std::abs(c01 / std::sqrt(c00 * c11) - 0.9) < 0.05);
}

TEST_CASE("funnel target reports divergences and keeps running") {
  auto config = gaussian_config(10, 2000, 1000, 13);
  config.init(0) = 1.0;
  const auto draws = oujm::sample(config, funnel());
  int post_warmup_div = 0;
  for (auto f : draws.chains[0].divergent) post_warmup_div += f;
  // The funnel neck is pathological for fixed-step HMC; divergences are the
  // expected signal, not an error.
  CHECK(draws.chains[0].divergences_total > 0);
  CHECK(draws.chains[0].draws.allFinite());
  (void)post_warmup_div;
}

TEST_CASE("acceptance matches the dual-averaging target after warm-up") {
  // 1-dim Gaussian at the default target.
  for (double delta : {0.8, 0.9}) {
    auto config = gaussian_config(1, 7000, 1500, 21);
    config.target_accept = delta;
    const auto draws = oujm::sample(config, std_gaussian(1));
    double acc = 0.0;
    for (double a : draws.chains[0].accept_stat) acc += a;
    acc /= draws.chains[0].accept_stat.size();
    CHECK(std::abs(acc - delta) < 0.05);
  }
  // Wider targets on a 5-dim Gaussian, away from the one-dimensional
  // integrator stability cliff.
  for (double delta : {0.7, 0.8, 0.9}) {
    auto config = gaussian_config(5, 7000, 1500, 22);
    config.target_accept = delta;
    const auto draws = oujm::sample(config, std_gaussian(5));
    double acc = 0.0;
    for (double a : draws.chains[0].accept_stat) acc += a;
    acc /= draws.chains[0].accept_stat.size();
    CHECK(std::abs(acc - delta) < 0.05);
  }
}

TEST_CASE("no adaptation after warm-up") {
  const auto target = std_gaussian(4);
  auto config = gaussian_config(4, 3000, 800, 31);
  const auto draws = oujm::sample(config, target);
  const auto& c = draws.chains[0];
  CHECK(c.final_step_size == c.step_size_at_warmup_end);
  CHECK((c.final_inv_mass - c.inv_mass_at_warmup_end).norm() == 0.0);
}

TEST_CASE("fixed seed reproduces draws bitwise; chain count does not matter") {
  const auto target = std_gaussian(3);
  auto config = gaussian_config(3, 600, 200, 77);
  config.chains = 2;
  const auto a = oujm::sample(config, target, {}, nullptr, true);
  const auto b = oujm::sample(config, target, {}, nullptr, false);
  for (int c = 0; c < 2; ++c) {
    REQUIRE(a.chains[c].draws.rows() == b.chains[c].draws.rows());
    CHECK((a.chains[c].draws - b.chains[c].draws).norm() == 0.0);
  }
  // Adding a third chain must not perturb the first two.
  config.chains = 3;
  const auto d = oujm::sample(config, target);
  for (int c = 0; c < 2; ++c)
    CHECK((a.chains[c].draws - d.chains[c].draws).norm() == 0.0);
}

TEST_CASE("initialization failure surfaces as a sampler error") {
  oujm::Target bad;
  bad.dim = 1;
  bad.value = [](const VectorXd&) {
    return -std::numeric_limits<double>::infinity();
  };
  bad.value_grad = [](const VectorXd&, VectorXd& g) {
    g = VectorXd::Zero(1);
    return -std::numeric_limits<double>::infinity();
  };
  auto config = gaussian_config(1, 100, 50, 5);
  CHECK_THROWS_AS(oujm::sample(config, bad), oujm::SamplerError);
}

TEST_CASE("rhat and ess on independent draws") {
  oujm::Rng rng(414);
  std::vector<MatrixXd> chains(2, MatrixXd(2000, 1));
  for (auto& c : chains)
    for (int i = 0; i < 2000; ++i) c(i, 0) = rng.normal();
  const auto re = oujm::rhat_ess(chains);
  CHECK(re[0].rhat > 0.99);
  CHECK(re[0].rhat < 1.01);
  CHECK(re[0].ess > 4000 * 0.85);
  CHECK(re[0].ess < 4000 * 1.15);
}

TEST_CASE("rhat flags gross nonconvergence") {
  oujm::Rng rng(415);
  std::vector<MatrixXd> chains(2, MatrixXd(1000, 1));
  for (int i = 0; i < 1000; ++i) {
    chains[0](i, 0) = rng.normal();
    chains[1](i, 0) = 10.0 + rng.normal();
  }
  CHECK(oujm::rhat_ess(chains)[0].rhat > 3.0);
}

TEST_CASE("rhat is undefined for a constant chain") {
  std::vector<MatrixXd> chains(1, MatrixXd::Constant(100, 1, 2.5));
  const auto re = oujm::rhat_ess(chains);
  CHECK(std::isnan(re[0].rhat));
}

TEST_CASE("ess tracks the AR(1) autocorrelation time") {
  oujm::Rng rng(416);
  const double phi = 0.9;
  std::vector<MatrixXd> chains(1, MatrixXd(20000, 1));
  double x = 0.0;
  for (int i = 0; i < 20000; ++i) {
    x = phi * x + std::sqrt(1.0 - phi * phi) * rng.normal();
    chains[0](i, 0) = x;
  }
  const double ratio = oujm::rhat_ess(chains)[0].ess / 20000.0;
  const double want = (1.0 - phi) / (1.0 + phi);
  CHECK(ratio > want / 1.5);
  CHECK(ratio < want * 1.5);
}

TEST_CASE("summarize quantiles") {
  std::vector<MatrixXd> tiny(1, (MatrixXd(3, 1) << 1.0, 2.0, 3.0).finished());
  const auto s = oujm::summarize(tiny, {0.05, 0.95});
  CHECK(s.median(0) == doctest::Approx(2.0));

  oujm::Rng rng(417);
  std::vector<MatrixXd> unif(1, MatrixXd(100000, 1));
  for (int i = 0; i < 100000; ++i) unif[0](i, 0) = rng.uniform();
  const auto su = oujm::summarize(unif, {0.05, 0.95});
  CHECK(std::abs(su.quantiles(0, 0) - 0.05) < 0.01);
  CHECK(std::abs(su.quantiles(0, 1) - 0.95) < 0.01);

  std::vector<MatrixXd> constant(1, MatrixXd::Constant(50, 1, 1.23));
  const auto sc = oujm::summarize(constant, {0.05, 0.95});
  CHECK(sc.quantiles(0, 1) - sc.quantiles(0, 0) == 0.0);

  CHECK_THROWS_AS(oujm::summarize({}, {0.5}), oujm::DomainError);
}

}  // TEST_SUITE
