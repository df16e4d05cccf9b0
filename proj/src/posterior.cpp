#include "oujm/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "oujm/smallmat.hpp"

namespace oujm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

// log(1 - tanh(x)^2) without underflow.
double log_one_minus_tanh_sq(double x) {
  const double ax = std::abs(x);
  return 2.0 * (std::log(2.0) - ax - std::log1p(std::exp(-2.0 * ax)));
}

bool chol2x2(const Eigen::Matrix2d& q, Eigen::Matrix2d& l) {
  const double a = q(0, 0);
  if (!(a > 0.0) || !std::isfinite(a)) return false;
  const double la = std::sqrt(a);
  const double lb = q(1, 0) / la;
  const double c = q(1, 1) - lb * lb;
  if (!(c > 0.0) || !std::isfinite(c)) return false;
  l(0, 0) = la;
  l(0, 1) = 0.0;
  l(1, 0) = lb;
  l(1, 1) = std::sqrt(c);
  return true;
}

}  // namespace

double normal_lpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * kLog2Pi - std::log(sd) - 0.5 * z * z;
}

double half_cauchy_lpdf(double x, double scale) {
  // x > 0; includes the x2 truncation constant.
  return std::log(2.0) - std::log(M_PI) - std::log(scale) -
         std::log1p((x / scale) * (x / scale));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double half_normal_lpdf(double x, double mean, double sd) {
  // N(mean, sd^2) truncated to x > 0, with the exact normalizing constant
  // (reduces to the x2 constant when mean = 0).
  return normal_lpdf(x, mean, sd) - std::log(normal_cdf(mean / sd));
}

int ParamLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw StructuralError("parameter name not in layout: " + name);
}

Posterior::Posterior(std::vector<SubjectRecord> subjects, ModelConfig config,
                     LikelihoodParts parts)
    : subjects_(std::move(subjects)), config_(std::move(config)), parts_(parts) {
  if (config_.p != 2)
    throw DimensionError(
        "mean-reversion constraints are implemented for p = 2 only");
  if (config_.factor_of.size() != config_.K)
    throw DimensionError("factor_of must have length K");
  for (int k = 0; k < config_.K; ++k)
    if (config_.factor_of(k) < 0 || config_.factor_of(k) >= config_.p)
      throw DomainError("factor_of entries must lie in [0, p)");

  max_event_time_ = 1.0;
  for (const auto& s : subjects_) {
    validate_subject(s, config_.K);
    if (static_cast<int>(s.covariates.size()) != config_.n_covariates)
      throw DimensionError("subject " + s.id +
                           ": covariate count does not match the model");
    max_event_time_ = std::max(max_event_time_, s.event_time);
  }
  if (config_.baseline == BaselineKind::kPiecewise)
    cutpoints_ = equal_cutpoints(max_event_time_, config_.segments);

  // Per-subject grids and cached index structures.
  grids_.reserve(subjects_.size());
  work_.reserve(subjects_.size());
  for (const auto& s : subjects_) {
    TimeGrid grid = build_grid(s.meas_times, s.event_time, config_.grid_width);
    SubjectWork w;
    w.m = grid.size();
    w.grid_times = Eigen::Map<const Eigen::VectorXd>(grid.points.data(), w.m);
    w.dts.resize(w.m - 1);
    for (int j = 1; j < w.m; ++j) w.dts(j - 1) = grid.points[j] - grid.points[j - 1];
    w.trap_w = Eigen::VectorXd::Zero(w.m);
    for (int j = 1; j < w.m; ++j) {
      w.trap_w(j - 1) += 0.5 * w.dts(j - 1);
      w.trap_w(j) += 0.5 * w.dts(j - 1);
    }
    w.meas_col.resize(s.meas_times.size());
    for (Eigen::Index a = 0; a < s.meas_times.size(); ++a) {
      const auto it = std::find(grid.points.begin(), grid.points.end(),
                                s.meas_times(a));
      if (it == grid.points.end())
        throw StructuralError("grid is missing a measurement time");
      w.meas_col[a] = static_cast<int>(it - grid.points.begin());
    }
    w.observed = missing_mask_apply(s);
    grids_.push_back(std::move(grid));
    work_.push_back(std::move(w));
  }

  // Flat layout.
  ParamLayout& l = layout_;
  l.p = config_.p;
  l.K = config_.K;
  l.q = config_.n_covariates;
  l.baseline = config_.baseline;
  l.survival = parts_ == LikelihoodParts::kJoint;
  l.segments = config_.segments;
  int idx = 0;
  l.theta_start = idx;
  for (int i = 0; i < l.p; ++i)
    for (int j = 0; j < l.p; ++j)
      l.names.push_back("theta[" + std::to_string(i + 1) + "," +
                        std::to_string(j + 1) + "]");
  idx += l.p * l.p;
  l.rho_start = idx;
  l.names.push_back("rho");
  idx += 1;
  l.lambda_start = idx;
  for (int k = 0; k < l.K; ++k)
    l.names.push_back("lambda[" + std::to_string(k + 1) + "]");
  idx += l.K;
  l.sigma_lambda_idx = idx;
  l.names.push_back("sigma_lambda");
  idx += 1;
  l.sigma_u_start = idx;
  for (int k = 0; k < l.K; ++k)
    l.names.push_back("sigma_u[" + std::to_string(k + 1) + "]");
  idx += l.K;
  l.sigma_eps_start = idx;
  for (int k = 0; k < l.K; ++k)
    l.names.push_back("sigma_eps[" + std::to_string(k + 1) + "]");
  idx += l.K;
  if (l.survival) {
    l.surv_start = idx;
    switch (l.baseline) {
      case BaselineKind::kConstant:
        l.names.push_back("beta0");
        idx += 1;
        break;
      case BaselineKind::kWeibull:
        l.names.push_back("wb_shape");
        l.names.push_back("wb_scale");
        idx += 2;
        break;
      case BaselineKind::kPiecewise:
        for (int b = 0; b < l.segments; ++b)
          l.names.push_back("h0[" + std::to_string(b + 1) + "]");
        l.names.push_back("sigma_beta");
        idx += l.segments + 1;
        break;
    }
    l.beta_start = idx;
    for (int j = 0; j < l.p; ++j)
      l.names.push_back("beta[" + std::to_string(j + 1) + "]");
    idx += l.p;
    l.alpha_start = idx;
    for (int j = 0; j < l.q; ++j)
      l.names.push_back("alpha[" + std::to_string(j + 1) + "]");
    idx += l.q;
  }
  l.z_start = idx;
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    l.subject_z_start.push_back(idx);
    const int m = work_[i].m;
    l.subject_m.push_back(m);
    for (int j = 0; j < l.p * m; ++j)
      l.names.push_back("z[" + std::to_string(i + 1) + "][" +
                        std::to_string(j + 1) + "]");
    idx += l.p * m;
  }
  l.dim = idx;
}

Eigen::VectorXd Posterior::pack(const StructuredParams& sp) const {
  const ParamLayout& l = layout_;
  Eigen::VectorXd pv(l.dim);
  for (int i = 0; i < l.p; ++i)
    for (int j = 0; j < l.p; ++j)
      pv(l.theta_start + i * l.p + j) = sp.theta(i, j);
  pv(l.rho_start) = sp.rho_uncon(0);
  pv.segment(l.lambda_start, l.K) = sp.log_lambda;
  pv(l.sigma_lambda_idx) = sp.log_sigma_lambda;
  pv.segment(l.sigma_u_start, l.K) = sp.log_sigma_u;
  pv.segment(l.sigma_eps_start, l.K) = sp.log_sigma_eps;
  if (l.survival) {
    switch (l.baseline) {
      case BaselineKind::kConstant:
        pv(l.surv_start) = sp.surv.beta0;
        break;
      case BaselineKind::kWeibull:
        pv(l.surv_start) = sp.surv.wb_log_shape;
        pv(l.surv_start + 1) = sp.surv.wb_log_scale;
        break;
      case BaselineKind::kPiecewise:
        pv.segment(l.surv_start, l.segments) = sp.surv.log_levels;
        pv(l.surv_start + l.segments) = sp.surv.log_sigma_beta;
        break;
    }
    pv.segment(l.beta_start, l.p) = sp.surv.beta;
    if (l.q > 0) pv.segment(l.alpha_start, l.q) = sp.surv.alpha;
  }
  if (static_cast<int>(sp.z.size()) != n_subjects())
    throw StructuralError("pack: wrong number of innovation blocks");
  for (int i = 0; i < n_subjects(); ++i) {
    const int m = l.subject_m[i];
    if (sp.z[i].rows() != l.p || sp.z[i].cols() != m)
      throw StructuralError("pack: innovation block " + std::to_string(i) +
                            " has the wrong shape");
    Eigen::Map<Eigen::MatrixXd>(pv.data() + l.subject_z_start[i], l.p, m) =
        sp.z[i];
  }
  return pv;
}

StructuredParams Posterior::unpack(const Eigen::VectorXd& pv) const {
  const ParamLayout& l = layout_;
  if (pv.size() != l.dim)
    throw StructuralError("unpack: expected dimension " + std::to_string(l.dim) +
                          ", got " + std::to_string(pv.size()));
  StructuredParams sp;
  sp.theta.resize(l.p, l.p);
  for (int i = 0; i < l.p; ++i)
    for (int j = 0; j < l.p; ++j)
      sp.theta(i, j) = pv(l.theta_start + i * l.p + j);
  sp.rho_uncon = pv.segment(l.rho_start, 1);
  sp.log_lambda = pv.segment(l.lambda_start, l.K);
  sp.log_sigma_lambda = pv(l.sigma_lambda_idx);
  sp.log_sigma_u = pv.segment(l.sigma_u_start, l.K);
  sp.log_sigma_eps = pv.segment(l.sigma_eps_start, l.K);
  if (l.survival) {
    switch (l.baseline) {
      case BaselineKind::kConstant:
        sp.surv.beta0 = pv(l.surv_start);
        break;
      case BaselineKind::kWeibull:
        sp.surv.wb_log_shape = pv(l.surv_start);
        sp.surv.wb_log_scale = pv(l.surv_start + 1);
        break;
      case BaselineKind::kPiecewise:
        sp.surv.log_levels = pv.segment(l.surv_start, l.segments);
        sp.surv.log_sigma_beta = pv(l.surv_start + l.segments);
        break;
    }
    sp.surv.beta = pv.segment(l.beta_start, l.p);
    sp.surv.alpha = pv.segment(l.alpha_start, l.q);
  }
  for (int i = 0; i < n_subjects(); ++i)
    sp.z.push_back(Eigen::Map<const Eigen::MatrixXd>(
        pv.data() + l.subject_z_start[i], l.p, l.subject_m[i]));
  return sp;
}

Eigen::VectorXd Posterior::to_constrained(const Eigen::VectorXd& pv) const {
  const ParamLayout& l = layout_;
  Eigen::VectorXd out = pv;
  out(l.rho_start) = kRhoBound * std::tanh(pv(l.rho_start));
  for (int k = 0; k < l.K; ++k) {
    out(l.lambda_start + k) = std::exp(pv(l.lambda_start + k));
    out(l.sigma_u_start + k) = std::exp(pv(l.sigma_u_start + k));
    out(l.sigma_eps_start + k) = std::exp(pv(l.sigma_eps_start + k));
  }
  out(l.sigma_lambda_idx) = std::exp(pv(l.sigma_lambda_idx));
  if (l.survival) {
    switch (l.baseline) {
      case BaselineKind::kConstant:
        break;  // beta0 is the log level already
      case BaselineKind::kWeibull:
        out(l.surv_start) = std::exp(pv(l.surv_start));
        out(l.surv_start + 1) = std::exp(pv(l.surv_start + 1));
        break;
      case BaselineKind::kPiecewise:
        for (int b = 0; b < l.segments; ++b)
          out(l.surv_start + b) = std::exp(pv(l.surv_start + b));
        out(l.surv_start + l.segments) = std::exp(pv(l.surv_start + l.segments));
        break;
    }
  }
  return out;
}

double Posterior::log_posterior(const Eigen::VectorXd& pv) const {
  return eval(pv, nullptr);
}

double Posterior::log_posterior_grad(const Eigen::VectorXd& pv,
                                     Eigen::VectorXd& grad) const {
  grad.resize(layout_.dim);
  return eval(pv, &grad);
}

Eigen::VectorXd Posterior::grad_log_posterior(const Eigen::VectorXd& pv) const {
  Eigen::VectorXd grad(layout_.dim);
  const double value = eval(pv, &grad);
  if (!std::isfinite(value))
    throw DomainError("gradient undefined at a rejected point");
  return grad;
}

OUParams Posterior::ou_params(const Eigen::VectorXd& pv) const {
  const ParamLayout& l = layout_;
  Eigen::MatrixXd theta(l.p, l.p);
  for (int i = 0; i < l.p; ++i)
    for (int j = 0; j < l.p; ++j)
      theta(i, j) = pv(l.theta_start + i * l.p + j);
  Eigen::VectorXd rho(1);
  rho(0) = kRhoBound * std::tanh(pv(l.rho_start));
  return make_correlation_params(theta, rho);
}

LoadingModel Posterior::loading_model(const Eigen::VectorXd& pv) const {
  const ParamLayout& l = layout_;
  LoadingModel m;
  m.K = l.K;
  m.p = l.p;
  m.factor_of = config_.factor_of;
  m.lambda = pv.segment(l.lambda_start, l.K).array().exp();
  m.sigma_u = pv.segment(l.sigma_u_start, l.K).array().exp();
  m.sigma_eps = pv.segment(l.sigma_eps_start, l.K).array().exp();
  return m;
}

HazardSpec Posterior::hazard_spec(const Eigen::VectorXd& pv) const {
  if (!layout_.survival)
    throw StructuralError("hazard_spec: posterior has no survival block");
  const ParamLayout& l = layout_;
  HazardSpec s;
  s.baseline = l.baseline;
  switch (l.baseline) {
    case BaselineKind::kConstant:
      s.beta0 = pv(l.surv_start);
      break;
    case BaselineKind::kWeibull:
      s.wb_shape = std::exp(pv(l.surv_start));
      s.wb_scale = std::exp(pv(l.surv_start + 1));
      break;
    case BaselineKind::kPiecewise:
      s.cutpoints = cutpoints_;
      s.log_levels = pv.segment(l.surv_start, l.segments);
      s.rw_sd = std::exp(pv(l.surv_start + l.segments));
      break;
  }
  s.beta = pv.segment(l.beta_start, l.p);
  s.alpha = pv.segment(l.alpha_start, l.q);
  return s;
}

Eigen::MatrixXd Posterior::latent_path(const Eigen::VectorXd& pv,
                                       int subject) const {
  const ParamLayout& l = layout_;
  const OUParams params = ou_params(pv);
  const Eigen::MatrixXd z = Eigen::Map<const Eigen::MatrixXd>(
      pv.data() + l.subject_z_start[subject], l.p, l.subject_m[subject]);
  return unwhiten(params, work_[subject].grid_times, z);
}

double Posterior::log_prior(const Eigen::VectorXd& pv) const {
  const ParamLayout& l = layout_;
  if (pv.size() != l.dim) throw StructuralError("log_prior: bad dimension");
  const PriorSpec& pr = config_.priors;
  double total = 0.0;

  for (int i = 0; i < l.p * l.p; ++i)
    total += normal_lpdf(pv(l.theta_start + i), 0.0, pr.theta_sd);

  const double rho_u = pv(l.rho_start);
  total += -std::log(2.0 * kRhoBound);  // uniform prior on rho
  total += std::log(kRhoBound) + log_one_minus_tanh_sq(rho_u);

  const double sl = std::exp(pv(l.sigma_lambda_idx));
  total += half_cauchy_lpdf(sl, pr.sigma_lambda_scale) + pv(l.sigma_lambda_idx);
  for (int k = 0; k < l.K; ++k) {
    const double lam = std::exp(pv(l.lambda_start + k));
    total += half_normal_lpdf(lam, pr.lambda_mean, sl) + pv(l.lambda_start + k);
    const double su = std::exp(pv(l.sigma_u_start + k));
    total += half_cauchy_lpdf(su, pr.sigma_u_scale) + pv(l.sigma_u_start + k);
    const double se = std::exp(pv(l.sigma_eps_start + k));
    total += half_cauchy_lpdf(se, pr.sigma_eps_scale) + pv(l.sigma_eps_start + k);
  }

  if (l.survival) {
    switch (l.baseline) {
      case BaselineKind::kConstant:
        total += normal_lpdf(pv(l.surv_start), 0.0, pr.beta0_sd);
        break;
      case BaselineKind::kWeibull:
        total += normal_lpdf(pv(l.surv_start), 0.0, pr.wb_log_sd);
        total += normal_lpdf(pv(l.surv_start + 1), 0.0, pr.wb_log_sd);
        break;
      case BaselineKind::kPiecewise: {
        const double sb = std::exp(pv(l.surv_start + l.segments));
        double prev = 0.0;
        for (int b = 0; b < l.segments; ++b) {
          const double x = pv(l.surv_start + b);
          total += normal_lpdf(x, prev, sb);
          prev = x;
        }
        // sigma_beta^2 ~ half-Cauchy, mapped to a density on log sigma_beta.
        total += half_cauchy_lpdf(sb * sb, pr.sigma_beta_sq_scale) +
                 std::log(2.0 * sb) + pv(l.surv_start + l.segments);
        break;
      }
    }
    for (int j = 0; j < l.p; ++j)
      total += normal_lpdf(pv(l.beta_start + j), 0.0, pr.beta_sd);
    for (int j = 0; j < l.q; ++j)
      total += normal_lpdf(pv(l.alpha_start + j), 0.0, pr.alpha_sd);
  }
  return total;
}

double Posterior::eval(const Eigen::VectorXd& pv, Eigen::VectorXd* grad) const {
  using Eigen::Matrix2d;
  using Eigen::Matrix4d;
  using Eigen::Vector2d;
  const ParamLayout& l = layout_;
  if (pv.size() != l.dim)
    throw StructuralError("log_posterior: expected dimension " +
                          std::to_string(l.dim) + ", got " +
                          std::to_string(pv.size()));
  if (!pv.allFinite()) return kNegInf;
  if (grad) grad->setZero();

  Matrix2d theta;
  theta << pv(l.theta_start), pv(l.theta_start + 1), pv(l.theta_start + 2),
      pv(l.theta_start + 3);
  // Mean-reversion rejection: trace and determinant must be positive.
  const double v1 = theta(0, 0) + theta(1, 1);
  const double v2 = theta(0, 0) * theta(1, 1) - theta(0, 1) * theta(1, 0);
  if (!(v1 > 0.0) || !(v2 > 0.0)) return kNegInf;

  const double rho_u = pv(l.rho_start);
  const double tanh_r = std::tanh(rho_u);
  const double rho = kRhoBound * tanh_r;

  Eigen::VectorXd lambda(l.K), sigma_u(l.K), sigma_eps(l.K);
  for (int k = 0; k < l.K; ++k) {
    lambda(k) = std::exp(pv(l.lambda_start + k));
    sigma_u(k) = std::exp(pv(l.sigma_u_start + k));
    sigma_eps(k) = std::exp(pv(l.sigma_eps_start + k));
  }

  Eigen::VectorXd beta, alpha;
  double wb_shape = 1.0, wb_log_scale = 0.0;
  if (l.survival) {
    beta = pv.segment(l.beta_start, l.p);
    alpha = pv.segment(l.alpha_start, l.q);
    if (l.baseline == BaselineKind::kWeibull) {
      wb_shape = std::exp(pv(l.surv_start));
      wb_log_scale = pv(l.surv_start + 1);
    }
  }

  Matrix2d V;
  V << 1.0, rho, rho, 1.0;
  Matrix2d Vjit = V;
  Vjit.diagonal().array() += kCondCovJitter;
  Matrix2d Lv;
  if (!chol2x2(Vjit, Lv)) return kNegInf;

  double total = 0.0;

  // Shared-parameter adjoints accumulated across subjects.
  Matrix2d theta_bar = Matrix2d::Zero();
  Matrix2d v_bar = Matrix2d::Zero();
  Matrix2d lv_bar = Matrix2d::Zero();
  Eigen::VectorXd lambda_bar = Eigen::VectorXd::Zero(l.K);
  Eigen::VectorXd se2_bar = Eigen::VectorXd::Zero(l.K);
  Eigen::VectorXd su2_bar = Eigen::VectorXd::Zero(l.K);
  Eigen::VectorXd beta_bar = Eigen::VectorXd::Zero(l.p);
  Eigen::VectorXd alpha_bar = Eigen::VectorXd::Zero(l.q);
  double beta0_bar = 0.0, wb_shape_bar = 0.0, wb_scale_bar = 0.0;
  Eigen::VectorXd level_bar;
  if (l.baseline == BaselineKind::kPiecewise)
    level_bar = Eigen::VectorXd::Zero(l.segments);

  std::vector<Matrix2d> A, L;
  Eigen::MatrixXd eta, g_eta, z_bar;
  Eigen::VectorXd resid, resid_bar;

  for (int i = 0; i < n_subjects(); ++i) {
    const SubjectWork& w = work_[i];
    const SubjectRecord& s = subjects_[i];
    const int m = w.m;
    Eigen::Map<const Eigen::MatrixXd> z(pv.data() + l.subject_z_start[i], 2, m);

    A.assign(m, Matrix2d::Zero());
    L.assign(m, Matrix2d::Zero());
    eta.resize(2, m);
    L[0] = Lv;
    eta.col(0) = Lv * z.col(0);
    for (int j = 1; j < m; ++j) {
      const double dt = w.dts(j - 1);
      A[j] = mat_exp_core<Matrix2d>((-dt * theta).eval());
      Matrix2d q = V - A[j] * V * A[j].transpose();
      q = (0.5 * (q + q.transpose())).eval();
      q.diagonal().array() += kCondCovJitter;
      if (!chol2x2(q, L[j])) return kNegInf;
      eta.col(j) = A[j] * eta.col(j - 1) + L[j] * z.col(j);
    }

    if (grad) {
      g_eta.setZero(2, m);
    }

    // Measurement likelihood: per-outcome compound-symmetry blocks over the
    // observed occasions.
    for (int k = 0; k < l.K; ++k) {
      const auto& idx = w.observed[k];
      if (idx.empty()) continue;
      const int nk = static_cast<int>(idx.size());
      const int f = config_.factor_of(k);
      resid.resize(nk);
      for (int a = 0; a < nk; ++a)
        resid(a) = s.y(k, idx[a]) - lambda(k) * eta(f, w.meas_col[idx[a]]);
      const double se2 = sigma_eps(k) * sigma_eps(k);
      const double su2 = sigma_u(k) * sigma_u(k);
      if (grad) {
        double d_se2, d_su2;
        total += cs_loglik_grad(resid, se2, su2, resid_bar, d_se2, d_su2);
        se2_bar(k) += d_se2;
        su2_bar(k) += d_su2;
        for (int a = 0; a < nk; ++a) {
          g_eta(f, w.meas_col[idx[a]]) -= lambda(k) * resid_bar(a);
          lambda_bar(k) -= resid_bar(a) * eta(f, w.meas_col[idx[a]]);
        }
      } else {
        total += cs_loglik(resid, se2, su2);
      }
    }

    // Survival likelihood: trapezoidal cumulative hazard plus the event term.
    if (l.survival) {
      const double alpha_term = l.q > 0 ? alpha.dot(s.covariates) : 0.0;
      double g_sum = 0.0;
      for (int j = 0; j < m; ++j) {
        double lh = beta(0) * eta(0, j) + beta(1) * eta(1, j) + alpha_term;
        double dlh_dshape = 0.0;
        switch (l.baseline) {
          case BaselineKind::kConstant:
            lh += pv(l.surv_start);
            break;
          case BaselineKind::kWeibull: {
            const double log_tc = std::log(std::max(w.grid_times(j), 1e-6));
            lh += pv(l.surv_start) - wb_log_scale +
                  (wb_shape - 1.0) * (log_tc - wb_log_scale);
            dlh_dshape = 1.0 + wb_shape * (log_tc - wb_log_scale);
            break;
          }
          case BaselineKind::kPiecewise:
            lh += pv(l.surv_start + piecewise_segment(cutpoints_, w.grid_times(j)));
            break;
        }
        const double h = std::exp(lh);
        const bool terminal = (j == m - 1);
        total += (terminal && s.event) ? lh : 0.0;
        total -= w.trap_w(j) * h;
        if (grad) {
          const double g = ((terminal && s.event) ? 1.0 : 0.0) - w.trap_w(j) * h;
          g_sum += g;
          g_eta(0, j) += g * beta(0);
          g_eta(1, j) += g * beta(1);
          beta_bar(0) += g * eta(0, j);
          beta_bar(1) += g * eta(1, j);
          switch (l.baseline) {
            case BaselineKind::kConstant:
              beta0_bar += g;
              break;
            case BaselineKind::kWeibull:
              wb_shape_bar += g * dlh_dshape;
              wb_scale_bar += g * (-wb_shape);
              break;
            case BaselineKind::kPiecewise:
              level_bar(piecewise_segment(cutpoints_, w.grid_times(j))) += g;
              break;
          }
        }
      }
      if (grad && l.q > 0) alpha_bar += g_sum * s.covariates;
    }

    // Standard-normal prior on the innovations.
    total += -0.5 * z.squaredNorm() - 0.5 * 2.0 * m * kLog2Pi;

    if (grad) {
      z_bar.resize(2, m);
      z_bar = -z;  // prior term
      Vector2d eta_bar = g_eta.col(m - 1);
      for (int j = m - 1; j >= 1; --j) {
        z_bar.col(j) += L[j].transpose() * eta_bar;
        const Matrix2d l_bar = eta_bar * z.col(j).transpose();
        Matrix2d a_bar = eta_bar * eta.col(j - 1).transpose();
        const Matrix2d q_bar = chol_adjoint<Matrix2d>(L[j], l_bar);
        a_bar += -2.0 * q_bar * A[j] * V;
        v_bar += q_bar - A[j].transpose() * q_bar * A[j];
        const double dt = w.dts(j - 1);
        theta_bar += -dt * mat_exp_adjoint<Matrix2d, Matrix4d>(
                              (-dt * theta).eval(), a_bar);
        eta_bar = g_eta.col(j - 1) + A[j].transpose() * eta_bar;
      }
      z_bar.col(0) += Lv.transpose() * eta_bar;
      lv_bar += eta_bar * z.col(0).transpose();
      Eigen::Map<Eigen::MatrixXd>(grad->data() + l.subject_z_start[i], 2, m) =
          z_bar;
    }
  }

  if (!std::isfinite(total)) return kNegInf;

  // Parameter priors and transform Jacobians.
  total += log_prior(pv);
  if (!std::isfinite(total)) return kNegInf;

  if (grad) {
    const PriorSpec& pr = config_.priors;

    v_bar += chol_adjoint<Matrix2d>(Lv, lv_bar);
    const double rho_bar = v_bar(0, 1) + v_bar(1, 0);

    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        (*grad)(l.theta_start + 2 * i + j) +=
            theta_bar(i, j) - theta(i, j) / (pr.theta_sd * pr.theta_sd);

    // rho chain rule plus the tanh Jacobian term.
    (*grad)(l.rho_start) +=
        rho_bar * kRhoBound * (1.0 - tanh_r * tanh_r) - 2.0 * tanh_r;

    const double sl = std::exp(pv(l.sigma_lambda_idx));
    const double mu = pr.lambda_mean;
    // sigma_lambda: half-Cauchy prior with Jacobian.
    (*grad)(l.sigma_lambda_idx) +=
        -2.0 * sl * sl / (pr.sigma_lambda_scale * pr.sigma_lambda_scale + sl * sl) +
        1.0;
    const double phi_mu = std::exp(-0.5 * (mu / sl) * (mu / sl)) /
                          std::sqrt(2.0 * M_PI);
    const double trunc_dsl = mu * phi_mu / (sl * sl * normal_cdf(mu / sl));
    for (int k = 0; k < l.K; ++k) {
      const double lam = lambda(k);
      (*grad)(l.lambda_start + k) +=
          lambda_bar(k) * lam - lam * (lam - mu) / (sl * sl) + 1.0;
      (*grad)(l.sigma_lambda_idx) +=
          (-1.0 / sl + (lam - mu) * (lam - mu) / (sl * sl * sl) + trunc_dsl) * sl;

      const double su = sigma_u(k);
      (*grad)(l.sigma_u_start + k) +=
          su2_bar(k) * 2.0 * su * su -
          2.0 * su * su / (pr.sigma_u_scale * pr.sigma_u_scale + su * su) + 1.0;
      const double se = sigma_eps(k);
      (*grad)(l.sigma_eps_start + k) +=
          se2_bar(k) * 2.0 * se * se -
          2.0 * se * se / (pr.sigma_eps_scale * pr.sigma_eps_scale + se * se) +
          1.0;
    }

    if (l.survival) {
      switch (l.baseline) {
        case BaselineKind::kConstant:
          (*grad)(l.surv_start) +=
              beta0_bar - pv(l.surv_start) / (pr.beta0_sd * pr.beta0_sd);
          break;
        case BaselineKind::kWeibull:
          (*grad)(l.surv_start) +=
              wb_shape_bar - pv(l.surv_start) / (pr.wb_log_sd * pr.wb_log_sd);
          (*grad)(l.surv_start + 1) +=
              wb_scale_bar - pv(l.surv_start + 1) / (pr.wb_log_sd * pr.wb_log_sd);
          break;
        case BaselineKind::kPiecewise: {
          const int B = l.segments;
          const double sb = std::exp(pv(l.surv_start + B));
          const double sb2 = sb * sb;
          double rw_quad = 0.0;
          double prev = 0.0;
          for (int b = 0; b < B; ++b) {
            const double x = pv(l.surv_start + b);
            const double d = x - prev;
            (*grad)(l.surv_start + b) += level_bar(b) - d / sb2;
            if (b + 1 < B) {
              const double dnext = pv(l.surv_start + b + 1) - x;
              (*grad)(l.surv_start + b) += dnext / sb2;
            }
            rw_quad += d * d;
            prev = x;
          }
          // d/dlog sb of the RW normal terms, the half-Cauchy on sb^2, and
          // the two Jacobian terms.
          const double s2 = pr.sigma_beta_sq_scale * pr.sigma_beta_sq_scale;
          (*grad)(l.surv_start + B) +=
              -static_cast<double>(B) + rw_quad / sb2 -
              4.0 * sb2 * sb2 / (s2 + sb2 * sb2) + 2.0;
          break;
        }
      }
      for (int j = 0; j < l.p; ++j)
        (*grad)(l.beta_start + j) +=
            beta_bar(j) - beta(j) / (pr.beta_sd * pr.beta_sd);
      for (int j = 0; j < l.q; ++j)
        (*grad)(l.alpha_start + j) +=
            alpha_bar(j) - alpha(j) / (pr.alpha_sd * pr.alpha_sd);
    }
  }

  return total;
}

}  // namespace oujm
