#include "oujm/ou.hpp"

#include <cmath>
#include <string>

#include "oujm/smallmat.hpp"

namespace oujm {

namespace {

void require_strictly_increasing(const Eigen::VectorXd& times) {
  for (Eigen::Index j = 1; j < times.size(); ++j)
    if (!(times(j) > times(j - 1)))
      throw OrderingError("times must be strictly increasing (violation at index " +
                          std::to_string(j) + ")");
}

Eigen::MatrixXd correlation_from_rho(int p, const Eigen::VectorXd& rho) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(p, p);
  Eigen::Index k = 0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) {
      c(i, j) = rho(k);
      c(j, i) = rho(k);
      ++k;
    }
  return c;
}

void check_constrained(const Eigen::MatrixXd& theta) {
  const OUConstraint c = constraints_ok(theta);
  if (!c.ok)
    throw ConstraintError("theta fails mean-reversion constraints (v1 = " +
                          std::to_string(c.v1) + ", v2 = " + std::to_string(c.v2) +
                          ")");
}

Eigen::MatrixXd chol_jittered(const Eigen::MatrixXd& cov) {
  Eigen::MatrixXd a = cov;
  a.diagonal().array() += kCondCovJitter;
  return chol_lower_core<Eigen::MatrixXd>(a);
}

double mvn_logpdf_centered(const Eigen::VectorXd& x, const Eigen::MatrixXd& chol) {
  const Eigen::Index p = x.size();
  Eigen::VectorXd w = chol.triangularView<Eigen::Lower>().solve(x);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) logdet += std::log(chol(i, i));
  return -0.5 * p * std::log(2.0 * M_PI) - logdet - 0.5 * w.squaredNorm();
}

}  // namespace

OUConstraint constraints_ok(const Eigen::MatrixXd& theta) {
  if (theta.rows() != 2 || theta.cols() != 2)
    throw DimensionError("constraints_ok: mean-reversion constraints are "
                         "implemented for p = 2 only");
  if (!all_finite(theta)) throw DomainError("constraints_ok: non-finite theta");
  OUConstraint c;
  c.v1 = theta(0, 0) + theta(1, 1);
  c.v2 = theta(0, 0) * theta(1, 1) - theta(0, 1) * theta(1, 0);
  c.ok = c.v1 > 0.0 && c.v2 > 0.0;
  return c;
}

OUParams make_volatility_params(const Eigen::MatrixXd& theta,
                                const Eigen::MatrixXd& sigma) {
  const int p = static_cast<int>(theta.rows());
  if (sigma.rows() != p || sigma.cols() != p)
    throw DimensionError("sigma must match theta dimension");
  for (int i = 0; i < p; ++i) {
    if (!(sigma(i, i) > 0.0))
      throw DomainError("sigma must have a positive diagonal");
    for (int j = i + 1; j < p; ++j)
      if (sigma(i, j) != 0.0)
        throw DomainError("sigma must be lower triangular");
  }
  OUParams out;
  out.p = p;
  out.theta = theta;
  out.sigma = sigma;
  return out;
}

OUParams make_correlation_params(const Eigen::MatrixXd& theta,
                                 const Eigen::VectorXd& rho,
                                 const Eigen::VectorXd& marginal_sd) {
  const int p = static_cast<int>(theta.rows());
  if (rho.size() != p * (p - 1) / 2)
    throw DimensionError("rho must have length p(p-1)/2");
  for (Eigen::Index k = 0; k < rho.size(); ++k)
    if (!(std::abs(rho(k)) < 1.0))
      throw DomainError("rho entries must lie in (-1, 1)");
  OUParams out;
  out.p = p;
  out.theta = theta;
  out.rho = rho;
  if (marginal_sd.size() == p)
    out.marginal_sd = marginal_sd;
  else
    out.marginal_sd = Eigen::VectorXd::Ones(p);
  return out;
}

Eigen::MatrixXd stationary_cov(const OUParams& params) {
  if (params.volatility_form())
    return lyapunov_solve(params.theta,
                          (*params.sigma) * params.sigma->transpose());
  Eigen::MatrixXd c = correlation_from_rho(params.p, *params.rho);
  return params.marginal_sd.asDiagonal() * c * params.marginal_sd.asDiagonal();
}

OUParams to_correlation_param(const Eigen::MatrixXd& theta,
                              const Eigen::MatrixXd& sigma) {
  check_constrained(theta);
  const OUParams vol = make_volatility_params(theta, sigma);
  const Eigen::MatrixXd v = stationary_cov(vol);
  const int p = vol.p;
  Eigen::VectorXd sd(p);
  for (int i = 0; i < p; ++i) {
    if (!(v(i, i) > 0.0))
      throw ConstraintError("stationary covariance has a non-positive diagonal");
    sd(i) = std::sqrt(v(i, i));
  }
  Eigen::VectorXd rho(p * (p - 1) / 2);
  Eigen::Index k = 0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) rho(k++) = v(i, j) / (sd(i) * sd(j));
  return make_correlation_params(theta, rho, sd);
}

OUParams to_volatility_param(const OUParams& params) {
  if (params.volatility_form()) return params;
  check_constrained(params.theta);
  const Eigen::MatrixXd v = stationary_cov(params);
  const Eigen::MatrixXd s = params.theta * v + v * params.theta.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw ConstraintError(
        "theta V + V theta^T is not positive definite (eigenvalue " +
        std::to_string(es.eigenvalues().minCoeff()) + ")");
  return make_volatility_params(params.theta,
                                chol_lower_core<Eigen::MatrixXd>(s));
}

OUParams to_volatility_param(const Eigen::MatrixXd& theta,
                             const Eigen::VectorXd& rho) {
  return to_volatility_param(make_correlation_params(theta, rho));
}

OUConditional conditional(const OUParams& params, double dt) {
  if (!(dt >= 0.0)) throw DomainError("conditional: dt must be nonnegative");
  check_constrained(params.theta);
  OUConditional out;
  out.mean_map = mat_exp(params.theta, -dt);
  const Eigen::MatrixXd v = stationary_cov(params);
  Eigen::MatrixXd q = v - out.mean_map * v * out.mean_map.transpose();
  out.cond_cov = 0.5 * (q + q.transpose());
  return out;
}

Eigen::MatrixXd marginal_cross_cov(const OUParams& params, double dt) {
  if (!(dt >= 0.0))
    throw DomainError("marginal_cross_cov: dt must be nonnegative");
  check_constrained(params.theta);
  const Eigen::MatrixXd v = stationary_cov(params);
  return v * mat_exp(params.theta.transpose(), -dt);
}

double path_logpdf(const OUParams& params, const Eigen::VectorXd& times,
                   const Eigen::MatrixXd& path) {
  require_strictly_increasing(times);
  const Eigen::Index m = times.size();
  if (path.cols() != m || path.rows() != params.p)
    throw DimensionError("path_logpdf: path must be p x M with M = #times");
  const Eigen::MatrixXd v = stationary_cov(params);
  double out = mvn_logpdf_centered(path.col(0), chol_jittered(v));
  for (Eigen::Index j = 1; j < m; ++j) {
    const OUConditional c = conditional(params, times(j) - times(j - 1));
    const Eigen::VectorXd resid = path.col(j) - c.mean_map * path.col(j - 1);
    out += mvn_logpdf_centered(resid, chol_jittered(c.cond_cov));
  }
  return out;
}

Eigen::MatrixXd unwhiten(const OUParams& params, const Eigen::VectorXd& times,
                         const Eigen::MatrixXd& innovations) {
  require_strictly_increasing(times);
  const Eigen::Index m = times.size();
  if (innovations.cols() != m || innovations.rows() != params.p)
    throw DimensionError("unwhiten: innovations must be p x M");
  if (!all_finite(innovations))
    throw DomainError("unwhiten: non-finite innovations");
  const Eigen::MatrixXd v = stationary_cov(params);
  Eigen::MatrixXd path(params.p, m);
  path.col(0) = chol_jittered(v) * innovations.col(0);
  for (Eigen::Index j = 1; j < m; ++j) {
    const OUConditional c = conditional(params, times(j) - times(j - 1));
    path.col(j) = c.mean_map * path.col(j - 1) +
                  chol_jittered(c.cond_cov) * innovations.col(j);
  }
  return path;
}

Eigen::MatrixXd whiten(const OUParams& params, const Eigen::VectorXd& times,
                       const Eigen::MatrixXd& path) {
  require_strictly_increasing(times);
  const Eigen::Index m = times.size();
  if (path.cols() != m || path.rows() != params.p)
    throw DimensionError("whiten: path must be p x M");
  const Eigen::MatrixXd v = stationary_cov(params);
  Eigen::MatrixXd z(params.p, m);
  z.col(0) = chol_jittered(v).triangularView<Eigen::Lower>().solve(path.col(0));
  for (Eigen::Index j = 1; j < m; ++j) {
    const OUConditional c = conditional(params, times(j) - times(j - 1));
    const Eigen::VectorXd resid = path.col(j) - c.mean_map * path.col(j - 1);
    z.col(j) =
        chol_jittered(c.cond_cov).triangularView<Eigen::Lower>().solve(resid);
  }
  return z;
}

}  // namespace oujm
