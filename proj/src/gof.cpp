#include "oujm/gof.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oujm/hmc.hpp"
#include "oujm/smallmat.hpp"

namespace oujm {

std::vector<KmPoint> kaplan_meier(const std::vector<double>& times,
                                  const std::vector<int>& events) {
  if (times.empty() || times.size() != events.size())
    throw DomainError("kaplan_meier: empty input or length mismatch");
  for (double t : times)
    if (!(t >= 0.0)) throw DomainError("kaplan_meier: negative time");

  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  std::vector<KmPoint> out;
  double surv = 1.0;
  double at_risk = static_cast<double>(times.size());
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = times[order[i]];
    int deaths = 0, censored = 0;
    while (i < order.size() && times[order[i]] == t) {
      if (events[order[i]])
        ++deaths;
      else
        ++censored;
      ++i;
    }
    if (deaths > 0) surv *= 1.0 - static_cast<double>(deaths) / at_risk;
    out.push_back({t, surv});
    at_risk -= deaths + censored;
  }
  return out;
}

OUParams ou_from_row(const ParamLayout& layout, const Eigen::VectorXd& row) {
  Eigen::MatrixXd theta(layout.p, layout.p);
  for (int i = 0; i < layout.p; ++i)
    for (int j = 0; j < layout.p; ++j)
      theta(i, j) = row(layout.theta_start + i * layout.p + j);
  Eigen::VectorXd rho(1);
  rho(0) = row(layout.rho_start);
  return make_correlation_params(theta, rho);
}

HazardSpec hazard_from_row(const ParamLayout& layout, const Eigen::VectorXd& row,
                           const Eigen::VectorXd& cutpoints) {
  if (!layout.survival)
    throw StructuralError("hazard_from_row: layout has no survival block");
  HazardSpec s;
  s.baseline = layout.baseline;
  switch (layout.baseline) {
    case BaselineKind::kConstant:
      s.beta0 = row(layout.surv_start);
      break;
    case BaselineKind::kWeibull:
      s.wb_shape = row(layout.surv_start);
      s.wb_scale = row(layout.surv_start + 1);
      break;
    case BaselineKind::kPiecewise:
      s.cutpoints = cutpoints;
      s.log_levels.resize(layout.segments);
      for (int b = 0; b < layout.segments; ++b)
        s.log_levels(b) = std::log(row(layout.surv_start + b));
      s.rw_sd = row(layout.surv_start + layout.segments);
      break;
  }
  s.beta = row.segment(layout.beta_start, layout.p);
  s.alpha = row.segment(layout.alpha_start, layout.q);
  return s;
}

Eigen::MatrixXd latent_from_row(const Posterior& post, const Eigen::VectorXd& row,
                                int subject) {
  const ParamLayout& l = post.layout();
  const auto& grid = post.grid(subject);
  Eigen::VectorXd times =
      Eigen::Map<const Eigen::VectorXd>(grid.points.data(), grid.size());
  const Eigen::MatrixXd z = Eigen::Map<const Eigen::MatrixXd>(
      row.data() + l.subject_z_start[subject], l.p, l.subject_m[subject]);
  return unwhiten(ou_from_row(l, row), times, z);
}

std::vector<CalibrationCurve> survival_calibration(const Posterior& post,
                                                   const Eigen::MatrixXd& draws,
                                                   int max_curves) {
  if (!post.layout().survival)
    throw StructuralError("survival_calibration: no survival block");
  if (draws.rows() == 0) throw DomainError("survival_calibration: no draws");
  if (draws.cols() != post.dim())
    throw StructuralError("survival_calibration: draw width does not include "
                          "the latent-path block");

  const int n_curves = std::min<int>(max_curves, static_cast<int>(draws.rows()));
  const int stride = std::max<int>(1, static_cast<int>(draws.rows()) / n_curves);

  std::vector<CalibrationCurve> out;
  std::vector<double> x(post.n_subjects());
  std::vector<int> delta(post.n_subjects());
  for (int g = 0; g < static_cast<int>(draws.rows()) &&
                  static_cast<int>(out.size()) < n_curves;
       g += stride) {
    const Eigen::VectorXd row = draws.row(g);
    const HazardSpec spec =
        hazard_from_row(post.layout(), row, post.piecewise_cutpoints());
    for (int i = 0; i < post.n_subjects(); ++i) {
      const Eigen::MatrixXd path = latent_from_row(post, row, i);
      const double chaz =
          cum_hazard(spec, post.grid(i), path, post.subjects()[i].covariates);
      x[i] = 1.0 - std::exp(-chaz);
      delta[i] = post.subjects()[i].event;
    }
    CalibrationCurve c;
    c.draw = g;
    c.curve = kaplan_meier(x, delta);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<DecayRow> correlation_decay(const ParamLayout& layout,
                                        const Eigen::MatrixXd& draws,
                                        const std::vector<double>& dts,
                                        double lo, double hi) {
  if (draws.rows() == 0) throw DomainError("correlation_decay: no draws");
  const int p = layout.p;
  const int d2 = 2 * p;
  std::vector<DecayRow> out;
  std::vector<double> vals(draws.rows());
  for (double dt : dts) {
    // Per-draw joint correlation blocks [V, V e^{-theta' dt};
    // e^{-theta dt} V, V].
    std::vector<Eigen::MatrixXd> psis;
    psis.reserve(draws.rows());
    for (int g = 0; g < draws.rows(); ++g) {
      const OUParams ou = ou_from_row(layout, draws.row(g));
      const Eigen::MatrixXd v = stationary_cov(ou);
      const Eigen::MatrixXd cross = marginal_cross_cov(ou, dt);
      Eigen::MatrixXd psi(d2, d2);
      psi.topLeftCorner(p, p) = v;
      psi.bottomRightCorner(p, p) = v;
      psi.topRightCorner(p, p) = cross;
      psi.bottomLeftCorner(p, p) = cross.transpose();
      psis.push_back(std::move(psi));
    }
    for (int a = 0; a < d2; ++a)
      for (int b = 0; b < d2; ++b) {
        for (int g = 0; g < draws.rows(); ++g) vals[g] = psis[g](a, b);
        DecayRow r;
        r.dt = dt;
        r.row = a;
        r.col = b;
        r.q_lo = quantile(vals, lo);
        r.q_med = quantile(vals, 0.5);
        r.q_hi = quantile(vals, hi);
        out.push_back(r);
      }
  }
  return out;
}

std::vector<ScoreRow> score_simulation(
    const std::vector<std::string>& names, const Eigen::VectorXd& median,
    const Eigen::VectorXd& q05, const Eigen::VectorXd& q95,
    const std::vector<std::pair<std::string, double>>& truth) {
  std::vector<std::string> unmatched;
  std::vector<ScoreRow> out;
  for (const auto& [name, value] : truth) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      unmatched.push_back(name);
      continue;
    }
    const Eigen::Index j = it - names.begin();
    ScoreRow r;
    r.name = name;
    r.truth = value;
    r.bias = median(j) - value;
    r.covered = (q05(j) <= value && value <= q95(j)) ? 1 : 0;
    out.push_back(std::move(r));
  }
  if (!unmatched.empty()) {
    std::string msg = "score_simulation: truth names missing from draws:";
    for (const auto& n : unmatched) msg += " " + n;
    throw StructuralError(msg);
  }
  return out;
}

}  // namespace oujm
