#pragma once

#include <Eigen/Dense>
#include <optional>

#include "oujm/errors.hpp"

namespace oujm {

// Jitter added to conditional covariances before factoring, so that nearly
// coincident time points do not break the Cholesky.
inline constexpr double kCondCovJitter = 1e-12;

// Mean-reverting OU process parameters in either (theta, sigma) or
// (theta, rho) form.  In rho form the stationary covariance is
// D * C(rho) * D with C the unit-diagonal correlation matrix; D defaults to
// the identity and carries the marginal SDs recorded by a conversion from
// volatility form, so conversions round-trip exactly.
struct OUParams {
  int p = 0;
  Eigen::MatrixXd theta;
  std::optional<Eigen::MatrixXd> sigma;  // lower triangular, positive diagonal
  std::optional<Eigen::VectorXd> rho;    // upper off-diagonals of C, row-major
  Eigen::VectorXd marginal_sd;           // length p; used only in rho form

  bool volatility_form() const { return sigma.has_value(); }
};

struct OUConstraint {
  double v1 = 0.0;
  double v2 = 0.0;
  bool ok = false;
};

struct OUConditional {
  Eigen::MatrixXd mean_map;  // exp(-theta * dt)
  Eigen::MatrixXd cond_cov;  // V - mean_map * V * mean_map^T
};

// Mean-reversion check for bivariate theta: trace and determinant must both
// be positive.  Dimensions other than 2 are rejected.
OUConstraint constraints_ok(const Eigen::MatrixXd& theta);

OUParams make_volatility_params(const Eigen::MatrixXd& theta,
                                const Eigen::MatrixXd& sigma);
OUParams make_correlation_params(const Eigen::MatrixXd& theta,
                                 const Eigen::VectorXd& rho,
                                 const Eigen::VectorXd& marginal_sd = {});

// Stationary covariance V of the process (solves theta V + V theta^T =
// sigma sigma^T in volatility form; assembled from rho and the recorded
// marginal SDs in correlation form).
Eigen::MatrixXd stationary_cov(const OUParams& params);

// (theta, sigma) -> (theta, rho), recording the implied marginal SDs.
OUParams to_correlation_param(const Eigen::MatrixXd& theta,
                              const Eigen::MatrixXd& sigma);

// (theta, rho) -> (theta, sigma) via the unique lower Cholesky factor of
// theta V + V theta^T.
OUParams to_volatility_param(const OUParams& params);
OUParams to_volatility_param(const Eigen::MatrixXd& theta,
                             const Eigen::VectorXd& rho);

// Conditional law of eta(t + dt) given eta(t).
OUConditional conditional(const OUParams& params, double dt);

// Cross-covariance cov(eta(s), eta(s + dt)) = V exp(-theta^T dt).
Eigen::MatrixXd marginal_cross_cov(const OUParams& params, double dt);

// Log-density of a discretely observed path: stationary N(0, V) at the first
// time plus the exact Gaussian transitions between consecutive times.
double path_logpdf(const OUParams& params, const Eigen::VectorXd& times,
                   const Eigen::MatrixXd& path);

// Non-centered map between standard-normal innovations and an OU path
// observed at `times`:  eta_0 = chol(V) z_0,
// eta_j = exp(-theta dt_j) eta_{j-1} + chol(cond_cov_j) z_j.
Eigen::MatrixXd unwhiten(const OUParams& params, const Eigen::VectorXd& times,
                         const Eigen::MatrixXd& innovations);
Eigen::MatrixXd whiten(const OUParams& params, const Eigen::VectorXd& times,
                       const Eigen::MatrixXd& path);

}  // namespace oujm
