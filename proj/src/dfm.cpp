#include "oujm/dfm.hpp"

#include <cmath>

namespace oujm {

void validate_loading_model(const LoadingModel& model) {
  if (model.K <= 0 || model.p <= 0)
    throw DimensionError("loading model needs K > 0 and p > 0");
  if (model.factor_of.size() != model.K || model.lambda.size() != model.K ||
      model.sigma_u.size() != model.K || model.sigma_eps.size() != model.K)
    throw DimensionError("loading model fields must all have length K");
  for (int k = 0; k < model.K; ++k) {
    if (model.factor_of(k) < 0 || model.factor_of(k) >= model.p)
      throw DomainError("outcome " + std::to_string(k) +
                        " maps to an invalid factor");
    if (!(model.lambda(k) > 0.0))
      throw DomainError("loadings must be positive");
    if (!(model.sigma_u(k) > 0.0) || !(model.sigma_eps(k) > 0.0))
      throw DomainError("sigma_u and sigma_eps must be positive");
  }
}

void validate_subject(const SubjectRecord& subject, int K) {
  if (!(subject.event_time > 0.0))
    throw DomainError("subject " + subject.id + ": event time must be positive");
  const Eigen::Index n = subject.meas_times.size();
  if (subject.y.rows() != K || subject.y.cols() != n)
    throw DimensionError("subject " + subject.id + ": y must be K x n");
  for (Eigen::Index j = 0; j < n; ++j) {
    if (subject.meas_times(j) < 0.0 ||
        subject.meas_times(j) > subject.event_time)
      throw DomainError("subject " + subject.id + ": measurement time " +
                        std::to_string(subject.meas_times(j)) +
                        " outside [0, event time]");
    if (j > 0 && !(subject.meas_times(j) > subject.meas_times(j - 1)))
      throw OrderingError("subject " + subject.id +
                          ": measurement times must be strictly increasing");
  }
  if (!subject.y.array().isFinite().any())
    throw DomainError("subject " + subject.id + ": no observed outcome values");
}

Eigen::MatrixXd loading_matrix(const LoadingModel& model) {
  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(model.K, model.p);
  for (int k = 0; k < model.K; ++k) lam(k, model.factor_of(k)) = model.lambda(k);
  return lam;
}

Eigen::VectorXd predict_mean(const LoadingModel& model,
                             const Eigen::VectorXd& eta) {
  if (eta.size() != model.p)
    throw DimensionError("predict_mean: eta must have length p");
  Eigen::VectorXd mu(model.K);
  for (int k = 0; k < model.K; ++k)
    mu(k) = model.lambda(k) * eta(model.factor_of(k));
  return mu;
}

std::vector<std::vector<int>> missing_mask_apply(const SubjectRecord& subject) {
  const int K = static_cast<int>(subject.y.rows());
  const int n = static_cast<int>(subject.y.cols());
  std::vector<std::vector<int>> observed(K);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < n; ++j)
      if (std::isfinite(subject.y(k, j))) observed[k].push_back(j);
  return observed;
}

double cs_loglik(const Eigen::VectorXd& r, double se2, double su2) {
  const double n = static_cast<double>(r.size());
  if (r.size() == 0) return 0.0;
  const double denom = se2 + n * su2;
  const double s1 = r.sum();
  const double s2 = r.squaredNorm();
  const double quad = (s2 - su2 / denom * s1 * s1) / se2;
  const double logdet = (n - 1.0) * std::log(se2) + std::log(denom);
  return -0.5 * (n * std::log(2.0 * M_PI) + logdet + quad);
}

double cs_loglik_grad(const Eigen::VectorXd& r, double se2, double su2,
                      Eigen::VectorXd& r_bar, double& se2_bar,
                      double& su2_bar) {
  const double n = static_cast<double>(r.size());
  r_bar.resize(r.size());
  if (r.size() == 0) {
    se2_bar = 0.0;
    su2_bar = 0.0;
    return 0.0;
  }
  const double denom = se2 + n * su2;
  const double s1 = r.sum();
  const double s2 = r.squaredNorm();
  const double quad = (s2 - su2 / denom * s1 * s1) / se2;
  const double logdet = (n - 1.0) * std::log(se2) + std::log(denom);

  // d ll / d r = -Sigma^{-1} r with the closed-form inverse.
  const double shrink = su2 * s1 / denom;
  r_bar = -(r.array() - shrink).matrix() / se2;

  se2_bar = -0.5 * ((n - 1.0) / se2 + 1.0 / denom - s2 / (se2 * se2) +
                    su2 * s1 * s1 * (denom + se2) / (se2 * se2 * denom * denom));
  su2_bar = -0.5 * (n / denom - s1 * s1 / (denom * denom));
  return -0.5 * (n * std::log(2.0 * M_PI) + logdet + quad);
}

double marginal_loglik(const LoadingModel& model, const SubjectRecord& subject,
                       const Eigen::MatrixXd& eta_at_meas) {
  validate_loading_model(model);
  const Eigen::Index n = subject.meas_times.size();
  if (subject.y.rows() != model.K || subject.y.cols() != n)
    throw DimensionError("marginal_loglik: y must be K x n");
  if (eta_at_meas.rows() != model.p || eta_at_meas.cols() != n)
    throw DimensionError("marginal_loglik: eta must be p x n");

  const auto observed = missing_mask_apply(subject);
  double total = 0.0;
  bool any = false;
  Eigen::VectorXd r;
  for (int k = 0; k < model.K; ++k) {
    const auto& idx = observed[k];
    if (idx.empty()) continue;
    any = true;
    r.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t a = 0; a < idx.size(); ++a)
      r(static_cast<Eigen::Index>(a)) =
          subject.y(k, idx[a]) -
          model.lambda(k) * eta_at_meas(model.factor_of(k), idx[a]);
    total += cs_loglik(r, model.sigma_eps(k) * model.sigma_eps(k),
                       model.sigma_u(k) * model.sigma_u(k));
  }
  if (!any)
    throw DomainError("marginal_loglik: subject " + subject.id +
                      " has no observed values");
  return total;
}

}  // namespace oujm
