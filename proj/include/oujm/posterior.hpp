#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "oujm/dfm.hpp"
#include "oujm/hazard.hpp"
#include "oujm/ou.hpp"

namespace oujm {

// Prior hyperparameters.  Defaults match the simulation-fit setup; the
// piecewise block is used only with a piecewise baseline.
struct PriorSpec {
  double theta_sd = 10.0;            // N(0, sd^2) on each theta entry
  double lambda_mean = 1.0;          // loadings ~ half-N(mean, sigma_lambda^2)
  double sigma_lambda_scale = 5.0;   // sigma_lambda ~ half-Cauchy(0, scale)
  double sigma_u_scale = 5.0;        // sigma_u ~ half-Cauchy(0, scale)
  double sigma_eps_scale = 5.0;      // sigma_eps ~ half-Cauchy(0, scale)
  double beta0_sd = 5.0;             // constant-baseline intercept
  double wb_log_sd = 5.0;            // N(0, sd^2) on Weibull log shape/scale
  double sigma_beta_sq_scale = 25.0; // sigma_beta^2 ~ half-Cauchy(0, scale)
  double beta_sd = 5.0;              // latent-factor coefficients
  double alpha_sd = 5.0;             // baseline-covariate coefficients
};

struct ModelConfig {
  int p = 2;
  int K = 4;
  Eigen::VectorXi factor_of;                 // length K
  BaselineKind baseline = BaselineKind::kConstant;
  int segments = 10;                         // piecewise B
  std::optional<double> grid_width = 0.8;    // nullopt = data times only
  int n_covariates = 0;
  PriorSpec priors;
};

// Scale bound of the stationary correlation: rho = kRhoBound * tanh(x).
inline constexpr double kRhoBound = 0.999999;

struct SurvivalParams {
  double beta0 = 0.0;
  double wb_log_shape = 0.0;
  double wb_log_scale = 0.0;
  Eigen::VectorXd log_levels;    // piecewise, length B
  double log_sigma_beta = 0.0;   // piecewise random-walk SD
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
};

// Structured view of one point in the unconstrained parameter space.
struct StructuredParams {
  Eigen::MatrixXd theta;           // p x p, unconstrained
  Eigen::VectorXd rho_uncon;       // p(p-1)/2, atanh scale
  Eigen::VectorXd log_lambda;      // K
  double log_sigma_lambda = 0.0;
  Eigen::VectorXd log_sigma_u;     // K
  Eigen::VectorXd log_sigma_eps;   // K
  SurvivalParams surv;             // present in joint mode
  std::vector<Eigen::MatrixXd> z;  // per subject, p x M_i innovations
};

// Flat coordinate order (stable across releases):
//   theta row-major (p^2), rho (atanh scale), log lambda (K),
//   log sigma_lambda, log sigma_u (K), log sigma_eps (K),
//   [joint mode: baseline params, beta (p), alpha (q)],
//   then per-subject innovations, column-major within each subject.
// Baseline params: constant -> beta0; weibull -> log shape, log scale;
// piecewise -> B log levels, log sigma_beta.
struct ParamLayout {
  int p = 2, K = 0, q = 0;
  BaselineKind baseline = BaselineKind::kConstant;
  bool survival = true;
  int segments = 0;
  int theta_start = 0, rho_start = 0, lambda_start = 0, sigma_lambda_idx = 0;
  int sigma_u_start = 0, sigma_eps_start = 0;
  int surv_start = 0, beta_start = 0, alpha_start = 0;
  int z_start = 0;
  std::vector<int> subject_z_start;
  std::vector<int> subject_m;
  int dim = 0;
  std::vector<std::string> names;  // constrained-scale names, one per coord

  int index_of(const std::string& name) const;
};

enum class LikelihoodParts { kJoint, kLongitudinalOnly };

// Joint posterior of the latent-factor model: survival and measurement
// likelihoods, the OU path prior in non-centered (whitened) form, parameter
// priors, and transform Jacobians.  Evaluation and the handwritten gradient
// are deterministic and safe to call concurrently.
class Posterior {
 public:
  Posterior(std::vector<SubjectRecord> subjects, ModelConfig config,
            LikelihoodParts parts = LikelihoodParts::kJoint);

  const ParamLayout& layout() const { return layout_; }
  int dim() const { return layout_.dim; }
  int n_subjects() const { return static_cast<int>(subjects_.size()); }
  const ModelConfig& config() const { return config_; }
  const std::vector<SubjectRecord>& subjects() const { return subjects_; }
  const TimeGrid& grid(int subject) const { return grids_[subject]; }
  double max_event_time() const { return max_event_time_; }
  const Eigen::VectorXd& piecewise_cutpoints() const { return cutpoints_; }

  Eigen::VectorXd pack(const StructuredParams& sp) const;
  StructuredParams unpack(const Eigen::VectorXd& pv) const;

  // Constrained-scale values (lambda, sigmas, rho, hazard levels on their
  // natural scales) in the same coordinate order.
  Eigen::VectorXd to_constrained(const Eigen::VectorXd& pv) const;

  // Log posterior density; -inf at rejected points (theta constraint
  // failures, overflow).
  double log_posterior(const Eigen::VectorXd& pv) const;

  // Value and gradient; grad is valid only when the value is finite.
  double log_posterior_grad(const Eigen::VectorXd& pv,
                            Eigen::VectorXd& grad) const;

  // Public gradient with the rejected-point contract.
  Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& pv) const;

  // Latent path of one subject implied by the draw (unwhitened innovations).
  Eigen::MatrixXd latent_path(const Eigen::VectorXd& pv, int subject) const;

  // Hazard specification implied by the draw (joint mode).
  HazardSpec hazard_spec(const Eigen::VectorXd& pv) const;

  LoadingModel loading_model(const Eigen::VectorXd& pv) const;
  OUParams ou_params(const Eigen::VectorXd& pv) const;

  // Sum of the parameter log-priors and transform Jacobians at pv (the whole
  // posterior when there are no subjects).
  double log_prior(const Eigen::VectorXd& pv) const;

 private:
  struct SubjectWork {
    Eigen::VectorXd grid_times;
    Eigen::VectorXd dts;            // M-1 gaps
    Eigen::VectorXd trap_w;         // M trapezoid weights
    std::vector<int> meas_col;      // grid column of each measurement occasion
    std::vector<std::vector<int>> observed;  // per outcome, occasion indices
    int m = 0;
  };

  double eval(const Eigen::VectorXd& pv, Eigen::VectorXd* grad) const;

  std::vector<SubjectRecord> subjects_;
  ModelConfig config_;
  LikelihoodParts parts_;
  std::vector<TimeGrid> grids_;
  std::vector<SubjectWork> work_;
  ParamLayout layout_;
  double max_event_time_ = 0.0;
  Eigen::VectorXd cutpoints_;
};

// Log-density helpers shared with the initializer.
double normal_lpdf(double x, double mean, double sd);
double half_cauchy_lpdf(double x, double scale);
double half_normal_lpdf(double x, double mean, double sd);
double normal_cdf(double x);

}  // namespace oujm
