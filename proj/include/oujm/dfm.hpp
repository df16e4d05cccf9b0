#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "oujm/errors.hpp"

namespace oujm {

// Loading model with structural zeros: each outcome measures exactly one
// latent factor, so the mask reduces to a factor index per outcome and one
// free (positive) loading per outcome.  Random-intercept and measurement-
// error covariances are diagonal.
struct LoadingModel {
  int K = 0;
  int p = 0;
  Eigen::VectorXi factor_of;  // length K, values in [0, p)
  Eigen::VectorXd lambda;     // length K, positive
  Eigen::VectorXd sigma_u;    // length K, positive
  Eigen::VectorXd sigma_eps;  // length K, positive
};

// One individual's longitudinal and event data.  Missing outcome values are
// NaN in y.
struct SubjectRecord {
  std::string id;
  Eigen::VectorXd meas_times;  // strictly increasing, within [0, event_time]
  Eigen::MatrixXd y;           // K x n_i
  double event_time = 0.0;
  int event = 0;
  Eigen::VectorXd covariates;
};

void validate_loading_model(const LoadingModel& model);
void validate_subject(const SubjectRecord& subject, int K);

// K x p loading matrix with the structural zeros filled in.
Eigen::MatrixXd loading_matrix(const LoadingModel& model);

// Population mean Lambda * eta (the random intercept is mean zero).
Eigen::VectorXd predict_mean(const LoadingModel& model,
                             const Eigen::VectorXd& eta);

// Per-outcome sorted lists of occasion indices with observed values.
std::vector<std::vector<int>> missing_mask_apply(const SubjectRecord& subject);

// Log-density of residuals r under the compound-symmetry law
// se2 * I + su2 * J that results from marginalizing the random intercept.
// The inverse and determinant are closed-form, so cost is linear in n.
double cs_loglik(const Eigen::VectorXd& r, double se2, double su2);

// Same value plus derivatives with respect to r and the two variances.
double cs_loglik_grad(const Eigen::VectorXd& r, double se2, double su2,
                      Eigen::VectorXd& r_bar, double& se2_bar,
                      double& su2_bar);

// Marginal log-likelihood of the observed outcome values given the latent
// factor values at the measurement occasions.
double marginal_loglik(const LoadingModel& model, const SubjectRecord& subject,
                       const Eigen::MatrixXd& eta_at_meas);

}  // namespace oujm
