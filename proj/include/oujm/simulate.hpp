#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "oujm/dfm.hpp"
#include "oujm/ou.hpp"
#include "oujm/rng.hpp"

namespace oujm {

enum class MeasPattern { kDense, kSparse, kCosine, kFile };

// Data-generating parameters for one simulation setting.
struct TrueParams {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd sigma;      // lower triangular
  double rho = 0.0;           // implied stationary correlation
  Eigen::VectorXi factor_of;  // K
  Eigen::VectorXd lambda, sigma_u, sigma_eps;
  double beta0 = 0.0;
  Eigen::VectorXd beta;
};

TrueParams setting_params(int setting);

struct SimConfig {
  int setting = 1;  // 1 or 2
  MeasPattern pattern = MeasPattern::kDense;
  int n_subjects = 200;
  double horizon = 28.0;
  std::uint64_t seed = 1;

  // Pattern knobs.  max_draws = 0 picks the per-setting default; the cosine
  // weights are |cos(2 pi t / period)| truncated to zero below `trunc`.
  int max_draws = 0;
  double cosine_period = 2.0;
  double cosine_trunc = 0.4;
  std::string timing_file;

  double fine_step = 0.005;      // latent/event simulation grid
  double meas_grid_step = 0.01;  // measurement candidate grid
  double censor_rate = 0.25;     // C = 10 * Exponential(rate)
  double censor_scale = 10.0;
};

int default_max_draws(int setting, MeasPattern pattern);

struct TruthRecord {
  Eigen::VectorXd path_times;  // fine grid restricted to [0, T]
  Eigen::MatrixXd path;        // 2 x #path_times
  double raw_event_time = 0.0; // +inf when no crossing by the horizon
  double censor_time = 0.0;
};

struct SimResult {
  std::vector<SubjectRecord> subjects;
  std::vector<TruthRecord> truth;
  TrueParams params;
  SimConfig config;
};

// Measurement-occasion draw for one subject (always includes time zero).
Eigen::VectorXd draw_measurement_times(MeasPattern pattern, const SimConfig& config,
                                       int setting, Rng& rng,
                                       const std::vector<double>* file_times = nullptr);

// Exact OU transition sampling on the fine grid from a stationary start.
Eigen::MatrixXd simulate_latent(const OUParams& params, double fine_step,
                                double horizon, Rng& rng);

// Inverse-cumulative-hazard event sampling along the fine grid with linear
// interpolation inside the crossing step.  Returns +inf when the threshold
// is not crossed by the horizon.
double simulate_event(double beta0, const Eigen::VectorXd& beta,
                      const Eigen::MatrixXd& latent_path, double fine_step,
                      Rng& rng);

struct CensorOutcome {
  double obs_time = 0.0;
  int event = 0;
};

CensorOutcome apply_censoring(double raw_event_time, double censor_time,
                              double horizon);

// Full dataset in memory; deterministic given config.seed.
SimResult simulate_dataset(const SimConfig& config);

// Writes long.csv, surv.csv, truth.csv and simconfig.json under out_dir.
void emit_dataset(const SimConfig& config, const std::string& out_dir);

// Stream ids of the per-subject RNG components (documented so the truth
// sidecar can regenerate the measurement noise).
enum SubjectStream : std::uint64_t {
  kStreamMeasTimes = 0,
  kStreamLatent = 1,
  kStreamEvent = 2,
  kStreamCensor = 3,
  kStreamIntercept = 4,
  kStreamNoise = 5,
  kStreamCount = 8
};

inline Rng subject_rng(std::uint64_t seed, int subject, SubjectStream stream) {
  return Rng(seed, static_cast<std::uint64_t>(subject) * kStreamCount + stream);
}

}  // namespace oujm
