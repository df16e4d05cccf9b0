#include "oujm/hazard.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace oujm {

Eigen::VectorXd equal_cutpoints(double horizon, int segments) {
  if (!(horizon > 0.0) || segments < 1)
    throw DomainError("equal_cutpoints: need horizon > 0 and segments >= 1");
  Eigen::VectorXd c(segments + 1);
  for (int b = 0; b <= segments; ++b)
    c(b) = horizon * static_cast<double>(b) / segments;
  return c;
}

int piecewise_segment(const Eigen::VectorXd& cutpoints, double t) {
  const int B = static_cast<int>(cutpoints.size()) - 1;
  if (t <= cutpoints(0)) {
    if (t < 0.0) throw DomainError("piecewise_segment: negative time");
    return 0;  // t = 0 belongs to the first segment
  }
  if (t > cutpoints(B))
    throw DomainError("piecewise_segment: time " + std::to_string(t) +
                      " beyond the last cut-point " +
                      std::to_string(cutpoints(B)));
  // Half-open intervals (c_{b-1}, c_b].
  int lo = 0, hi = B;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (t > cutpoints(mid))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

TimeGrid build_grid(const Eigen::VectorXd& meas_times, double event_time,
                    std::optional<double> width) {
  if (!(event_time > 0.0))
    throw DomainError("build_grid: event time must be positive");
  if (width && !(*width > 0.0))
    throw DomainError("build_grid: grid width must be positive");
  for (Eigen::Index j = 0; j < meas_times.size(); ++j) {
    if (meas_times(j) < 0.0 || meas_times(j) > event_time)
      throw DomainError("build_grid: measurement time outside [0, event]");
    if (j > 0 && !(meas_times(j) > meas_times(j - 1)))
      throw OrderingError("build_grid: measurement times must be increasing");
  }

  std::vector<double> pts;
  pts.push_back(0.0);
  pts.push_back(event_time);
  for (Eigen::Index j = 0; j < meas_times.size(); ++j)
    pts.push_back(meas_times(j));

  if (width) {
    const double w = *width;
    const double tol = 0.3 * w;
    for (int k = 1; k * w < event_time; ++k) {
      const double cand = k * w;
      bool drop = std::abs(cand - event_time) < tol;
      for (Eigen::Index j = 0; j < meas_times.size() && !drop; ++j)
        drop = std::abs(cand - meas_times(j)) < tol;
      if (!drop) pts.push_back(cand);
    }
  }

  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  TimeGrid grid;
  grid.points = std::move(pts);
  grid.role.assign(grid.points.size(), PointRole::kFiller);
  for (std::size_t m = 0; m < grid.points.size(); ++m) {
    for (Eigen::Index j = 0; j < meas_times.size(); ++j)
      if (grid.points[m] == meas_times(j)) grid.role[m] = PointRole::kMeasurement;
  }
  grid.role.back() = PointRole::kTerminal;
  return grid;
}

double log_baseline_hazard(const HazardSpec& spec, double t) {
  switch (spec.baseline) {
    case BaselineKind::kConstant:
      return spec.beta0;
    case BaselineKind::kWeibull: {
      // Clamp away from zero so shape < 1 stays finite at the origin.
      const double tc = std::max(t, 1e-6);
      return std::log(spec.wb_shape) - std::log(spec.wb_scale) +
             (spec.wb_shape - 1.0) * (std::log(tc) - std::log(spec.wb_scale));
    }
    case BaselineKind::kPiecewise:
      return spec.log_levels(piecewise_segment(spec.cutpoints, t));
  }
  throw DomainError("log_baseline_hazard: unknown baseline kind");
}

double hazard_at(const HazardSpec& spec, double t, const Eigen::VectorXd& eta_t,
                 const Eigen::VectorXd& covariates) {
  if (t < 0.0) throw DomainError("hazard_at: negative time");
  if (spec.beta.size() != eta_t.size())
    throw DimensionError("hazard_at: beta and eta dimensions differ");
  if (spec.alpha.size() != covariates.size())
    throw DimensionError("hazard_at: alpha and covariate dimensions differ");
  double lh = log_baseline_hazard(spec, t) + spec.beta.dot(eta_t);
  if (spec.alpha.size() > 0) lh += spec.alpha.dot(covariates);
  return std::exp(lh);
}

double cum_hazard(const HazardSpec& spec, const TimeGrid& grid,
                  const Eigen::MatrixXd& eta_path,
                  const Eigen::VectorXd& covariates) {
  const int m = grid.size();
  if (eta_path.cols() != m)
    throw DimensionError("cum_hazard: eta path must have one column per grid point");
  double prev = hazard_at(spec, grid.points[0], eta_path.col(0), covariates);
  double total = 0.0;
  for (int j = 1; j < m; ++j) {
    const double cur = hazard_at(spec, grid.points[j], eta_path.col(j), covariates);
    total += 0.5 * (prev + cur) * (grid.points[j] - grid.points[j - 1]);
    prev = cur;
  }
  return total;
}

double surv_loglik(const HazardSpec& spec, const SubjectRecord& subject,
                   const TimeGrid& grid, const Eigen::MatrixXd& eta_path) {
  if (grid.points.empty() || grid.points.back() != subject.event_time)
    throw DomainError("surv_loglik: grid terminal point must equal the event time");
  double out = -cum_hazard(spec, grid, eta_path, subject.covariates);
  if (subject.event) {
    out += std::log(hazard_at(spec, subject.event_time,
                              eta_path.col(grid.size() - 1),
                              subject.covariates));
  }
  return out;
}

}  // namespace oujm
