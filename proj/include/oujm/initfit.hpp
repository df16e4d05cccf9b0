#pragma once

#include <Eigen/Dense>
#include <vector>

#include "oujm/posterior.hpp"

namespace oujm {

struct Stage1Options {
  // Default maximizes the latent-marginalized posterior: the OU factors and
  // the random intercept integrate out exactly through a Kalman filter on
  // the augmented state (eta, u), so the optimization runs over the handful
  // of longitudinal parameters only.  (The joint mode over parameters and
  // whitened innovations sits on a scale ridge and is not offered.)  The
  // sampling variant runs a short chain on the non-centered posterior and
  // takes coordinate medians.
  enum class Method { kMarginalMap, kMcmc };
  Method method = Method::kMarginalMap;
  int max_iterations = 200;
  double grad_tol = 1e-4;
  int mcmc_iterations = 500;
  int mcmc_warmup = 250;
  std::uint64_t mcmc_seed = 1;
};

struct Stage1Result {
  Eigen::VectorXd point;  // unconstrained, longitudinal-only layout
  std::vector<Eigen::MatrixXd> latent;  // per subject, p x M_i at the union grid
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Maximizes (or briefly samples) the longitudinal-only posterior: measurement
// likelihood, OU path prior, and longitudinal parameter priors.
Stage1Result stage1_longitudinal(const std::vector<SubjectRecord>& data,
                                 const ModelConfig& config,
                                 const Stage1Options& options = {});

struct Stage2Result {
  double beta0 = 0.0;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  bool separation_flagged = false;
  int iterations = 0;
  double grad_norm = 0.0;
};

// Constant-baseline hazard MLE with the stage-1 latent paths as fixed
// time-varying covariates; Newton iterations to gradient norm < 1e-8.
Stage2Result stage2_hazard(const std::vector<SubjectRecord>& data,
                           const ModelConfig& config,
                           const std::vector<Eigen::MatrixXd>& latent_paths);

// Joint-layout initial point from the two stages: longitudinal blocks are
// copied, the survival block comes from stage 2, and innovations are the
// whitened stage-1 latent paths.  theta is projected back into the
// mean-reversion region if needed and the result is jittered until the joint
// posterior is finite.
Eigen::VectorXd assemble_init(const Posterior& joint, const Stage1Result& s1,
                              const Stage2Result& s2);

// Fixed initial values (no data pass): theta = [[1, 0.5], [0.5, 1]],
// rho = -0.5, unit loadings, all SDs 0.1, survival block (-1, -1, 1),
// innovations zero.
Eigen::VectorXd fixed_init(const Posterior& joint);

// Generic L-BFGS minimizer with Armijo backtracking (monotone); exposed for
// reuse and testing.
struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
};

LbfgsResult lbfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& f_grad,
    const Eigen::VectorXd& x0, int max_iterations = 400, double grad_tol = 1e-6);

}  // namespace oujm
