#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "oujm/posterior.hpp"

namespace oujm {

struct KmPoint {
  double time = 0.0;
  double survival = 1.0;
};

// Product-limit estimator; ties are grouped with deaths processed before
// censorings at equal times.  One output point per distinct input time.
std::vector<KmPoint> kaplan_meier(const std::vector<double>& times,
                                  const std::vector<int>& events);

// Reconstruction from one constrained draw row.
OUParams ou_from_row(const ParamLayout& layout, const Eigen::VectorXd& row);
HazardSpec hazard_from_row(const ParamLayout& layout, const Eigen::VectorXd& row,
                           const Eigen::VectorXd& cutpoints);
Eigen::MatrixXd latent_from_row(const Posterior& post,
                                const Eigen::VectorXd& row, int subject);

struct CalibrationCurve {
  int draw = 0;
  std::vector<KmPoint> curve;  // KM over x_i = 1 - S_i(T_i)
};

// Predicted-survival calibration: for each selected draw, each subject's
// survival probability at the observed time comes from that draw's own
// latent path, and a KM curve is fit to (1 - S_i(T_i), delta_i).  A well
// calibrated model tracks the diagonal from (0,1) to (1,0).
std::vector<CalibrationCurve> survival_calibration(const Posterior& post,
                                                   const Eigen::MatrixXd& draws,
                                                   int max_curves = 100);

struct DecayRow {
  double dt = 0.0;
  int row = 0, col = 0;  // entry of the 2p x 2p joint correlation matrix
  double q_lo = 0.0, q_med = 0.0, q_hi = 0.0;
};

// Joint correlation of eta(s) and eta(s + dt) per draw, summarized by
// quantile bands per entry.
std::vector<DecayRow> correlation_decay(const ParamLayout& layout,
                                        const Eigen::MatrixXd& draws,
                                        const std::vector<double>& dts,
                                        double lo = 0.25, double hi = 0.75);

struct ScoreRow {
  std::string name;
  double truth = 0.0;
  double bias = 0.0;  // posterior median minus truth
  int covered = 0;    // 5-95% interval covers the truth
};

// Per-parameter recovery scores against a truth table.  Every truth name
// must resolve in `names`; unmatched names are reported together.
std::vector<ScoreRow> score_simulation(
    const std::vector<std::string>& names, const Eigen::VectorXd& median,
    const Eigen::VectorXd& q05, const Eigen::VectorXd& q95,
    const std::vector<std::pair<std::string, double>>& truth);

}  // namespace oujm
