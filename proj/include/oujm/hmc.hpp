#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "oujm/errors.hpp"

namespace oujm {

struct SamplerError : Error {
  explicit SamplerError(const std::string& msg) : Error(msg) {}
};

// Static-trajectory HMC with a uniformly jittered leapfrog count, dual
// averaging of the step size during warm-up, and windowed diagonal
// mass-matrix estimation.  The post-warm-up kernel is fixed.
struct SamplerConfig {
  int chains = 1;
  int iterations = 3000;
  int warmup = 2000;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_leapfrog = 32;
  Eigen::VectorXd init;       // unconstrained initial point
  double init_jitter = 0.5;   // sd of jitter retries when the init is rejected
  int init_retries = 10;
};

// Differentiable log-density target.  value_grad may return -inf, in which
// case the gradient contents are ignored.
struct Target {
  int dim = 0;
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> value_grad;
};

struct ChainRecord {
  Eigen::MatrixXd draws;            // (iterations - warmup) x dim
  std::vector<std::uint8_t> divergent;
  std::vector<double> accept_stat;  // per post-warmup iteration
  std::vector<double> energy;
  double step_size_at_warmup_end = 0.0;
  double final_step_size = 0.0;
  Eigen::VectorXd inv_mass_at_warmup_end;
  Eigen::VectorXd final_inv_mass;
  int divergences_total = 0;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<ChainRecord> chains;
  int iterations = 0;
  int warmup = 0;

  int n_draws_per_chain() const { return iterations - warmup; }
};

// Runs `config.chains` independent chains; per-chain RNG streams are derived
// from the master seed, so results do not depend on the number of chains run
// or on whether they execute in parallel.  `record` maps an unconstrained
// point to the stored row (identity by default).
PosteriorDraws sample(const SamplerConfig& config, const Target& target,
                      const std::vector<std::string>& names = {},
                      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>&
                          record = nullptr,
                      bool parallel = true);

struct RhatEss {
  double rhat = 0.0;  // NaN when undefined (constant chain)
  double ess = 0.0;
};

// Split-Rhat from the between/within variance ratio and bulk ESS from the
// initial-positive-sequence autocorrelation sum.
std::vector<RhatEss> rhat_ess(const std::vector<Eigen::MatrixXd>& chains);

// Empirical quantile with linear interpolation between order statistics
// (h = (n-1)p convention).
double quantile(std::vector<double> xs, double p);

struct Summary {
  Eigen::VectorXd median;
  Eigen::MatrixXd quantiles;  // params x probs
};

Summary summarize(const std::vector<Eigen::MatrixXd>& chains,
                  const std::vector<double>& probs);

}  // namespace oujm
