#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "oujm/dfm.hpp"
#include "oujm/errors.hpp"

namespace oujm {

enum class BaselineKind { kConstant, kWeibull, kPiecewise };

// Parametric hazard h(t) = h0(t) exp(beta' eta(t) + alpha' x).
struct HazardSpec {
  BaselineKind baseline = BaselineKind::kConstant;
  double beta0 = 0.0;           // constant baseline: log h0
  double wb_shape = 1.0;        // Weibull baseline
  double wb_scale = 1.0;
  Eigen::VectorXd cutpoints;    // piecewise: c_0 = 0 < ... < c_B
  Eigen::VectorXd log_levels;   // piecewise: log levels, length B
  double rw_sd = 1.0;           // piecewise: random-walk SD on the log levels
  Eigen::VectorXd beta;         // latent-factor coefficients, length p
  Eigen::VectorXd alpha;        // baseline-covariate coefficients
};

enum class PointRole { kFiller, kMeasurement, kTerminal };

// Per-subject quadrature grid: measurement times, equally spaced filler
// points, and the event time as terminal point.
struct TimeGrid {
  std::vector<double> points;
  std::vector<PointRole> role;

  int size() const { return static_cast<int>(points.size()); }
};

// Equal-length cut-points for a piecewise baseline over [0, horizon].
Eigen::VectorXd equal_cutpoints(double horizon, int segments);

// Zero-based segment index of time t under half-open intervals
// (c_{b-1}, c_b], with t = 0 assigned to the first segment.
int piecewise_segment(const Eigen::VectorXd& cutpoints, double t);

// Union of measurement times, filler candidates at multiples of `width`
// below the event time, and {0, event time}.  A candidate is dropped when it
// lies within 0.3 * width of any measurement time or of the event time.
// Without a width the grid is just the measurement times plus {0, event}.
TimeGrid build_grid(const Eigen::VectorXd& meas_times, double event_time,
                    std::optional<double> width);

double log_baseline_hazard(const HazardSpec& spec, double t);

double hazard_at(const HazardSpec& spec, double t, const Eigen::VectorXd& eta_t,
                 const Eigen::VectorXd& covariates);

// Trapezoidal cumulative hazard over the grid.
double cum_hazard(const HazardSpec& spec, const TimeGrid& grid,
                  const Eigen::MatrixXd& eta_path,
                  const Eigen::VectorXd& covariates);

// delta * log h(T) - cumulative hazard.
double surv_loglik(const HazardSpec& spec, const SubjectRecord& subject,
                   const TimeGrid& grid, const Eigen::MatrixXd& eta_path);

}  // namespace oujm
