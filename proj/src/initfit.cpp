#include "oujm/initfit.hpp"

#include <cmath>
#include <deque>

#include "oujm/hmc.hpp"
#include "oujm/ou.hpp"
#include "oujm/rng.hpp"
#include "oujm/smallmat.hpp"

namespace oujm {

LbfgsResult lbfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& f_grad,
    const Eigen::VectorXd& x0, int max_iterations, double grad_tol) {
  const int history = 8;
  const Eigen::Index n = x0.size();
  LbfgsResult out;
  out.x = x0;
  Eigen::VectorXd grad(n);
  out.f = f_grad(out.x, grad);
  if (!std::isfinite(out.f))
    throw DomainError("lbfgs: objective not finite at the starting point");

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd q(n), dir(n), x_new(n), grad_new(n);

  for (int it = 0; it < max_iterations; ++it) {
    if (grad.cwiseAbs().maxCoeff() < grad_tol * std::max(1.0, std::abs(out.f))) {
      out.converged = true;
      break;
    }
    q = grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    double scale = 1.0;
    if (!s_hist.empty())
      scale = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    q *= scale;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    dir = -q;
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {  // not a descent direction: steepest descent restart
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -grad;
      slope = grad.dot(dir);
    }

    // Armijo backtracking keeps the iteration monotone.
    double step = (it == 0) ? 1.0 / std::max(1.0, grad.norm()) : 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = out.x + step * dir;
      const double f_new = f_grad(x_new, grad_new);
      if (std::isfinite(f_new) && f_new <= out.f + 1e-4 * step * slope) {
        Eigen::VectorXd s = x_new - out.x;
        Eigen::VectorXd y = grad_new - grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
          s_hist.push_back(std::move(s));
          y_hist.push_back(std::move(y));
          rho_hist.push_back(1.0 / sy);
          if (static_cast<int>(s_hist.size()) > history) {
            s_hist.pop_front();
            y_hist.pop_front();
            rho_hist.pop_front();
          }
        }
        out.x = x_new;
        out.f = f_new;
        grad = grad_new;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++out.iterations;
    if (!accepted) break;  // line search stalled at the best-found point
  }
  return out;
}

namespace {

// ---- Latent-marginalized longitudinal likelihood -------------------------
//
// Augmented linear-Gaussian state s_j = (eta(t_j), u) on the union grid:
// eta follows the exact OU transitions, u is constant, and measurement
// columns observe y = [Lambda, I] s + eps.  A Kalman filter gives the exact
// marginal likelihood with eta and u integrated out; the RTS smoother gives
// the latent-path summaries handed to stage 2.

struct KalmanSubject {
  const SubjectRecord* subject = nullptr;
  Eigen::VectorXd times;        // union grid
  std::vector<int> col_to_occ;  // grid column -> measurement occasion or -1
};

struct KalmanParams {
  Eigen::Matrix2d theta;
  double rho = 0.0;
  Eigen::VectorXd lambda, sig_u2, sig_eps2;
  const Eigen::VectorXi* factor_of = nullptr;
};

double kalman_subject(const KalmanParams& kp, const KalmanSubject& info,
                      Eigen::MatrixXd* smoothed_eta) {
  const int K = static_cast<int>(kp.lambda.size());
  const int dim = 2 + K;
  const int m = static_cast<int>(info.times.size());
  const SubjectRecord& s = *info.subject;

  Eigen::Matrix2d v;
  v << 1.0, kp.rho, kp.rho, 1.0;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(dim, dim);
  p.topLeftCorner(2, 2) = v;
  p.bottomRightCorner(K, K) = kp.sig_u2.asDiagonal();

  std::vector<Eigen::VectorXd> x_pred(m), x_filt(m);
  std::vector<Eigen::MatrixXd> p_pred(m), p_filt(m);
  std::vector<Eigen::Matrix2d> mean_map(m);

  double ll = 0.0;
  for (int j = 0; j < m; ++j) {
    if (j > 0) {
      const double dt = info.times(j) - info.times(j - 1);
      const Eigen::Matrix2d a =
          mat_exp_core<Eigen::Matrix2d>((-dt * kp.theta).eval());
      Eigen::Matrix2d q = v - a * v * a.transpose();
      q = (0.5 * (q + q.transpose())).eval();
      q.diagonal().array() += kCondCovJitter;
      mean_map[j] = a;
      x.head<2>() = a * x.head<2>();
      p.topLeftCorner(2, 2) =
          a * p.topLeftCorner(2, 2) * a.transpose() + q;
      p.topRightCorner(2, K) = a * p.topRightCorner(2, K);
      p.bottomLeftCorner(K, 2) = p.topRightCorner(2, K).transpose();
    }
    x_pred[j] = x;
    p_pred[j] = p;

    const int occ = info.col_to_occ[j];
    if (occ >= 0) {
      std::vector<int> obs;
      for (int k = 0; k < K; ++k)
        if (std::isfinite(s.y(k, occ))) obs.push_back(k);
      if (!obs.empty()) {
        const int no = static_cast<int>(obs.size());
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(no, dim);
        Eigen::VectorXd nu(no);
        Eigen::VectorXd r(no);
        for (int rI = 0; rI < no; ++rI) {
          const int k = obs[rI];
          h(rI, (*kp.factor_of)(k)) = kp.lambda(k);
          h(rI, 2 + k) = 1.0;
          nu(rI) = s.y(k, occ);
          r(rI) = kp.sig_eps2(k);
        }
        nu -= h * x;
        const Eigen::MatrixXd hp = h * p;
        Eigen::MatrixXd sc = hp * h.transpose();
        sc.diagonal() += r;
        Eigen::LLT<Eigen::MatrixXd> llt(sc);
        if (llt.info() != Eigen::Success) return -1e300;
        double logdet = 0.0;
        for (int rI = 0; rI < no; ++rI)
          logdet += std::log(Eigen::MatrixXd(llt.matrixL())(rI, rI));
        const Eigen::VectorXd w = llt.matrixL().solve(nu);
        ll += -0.5 * no * std::log(2.0 * M_PI) - logdet - 0.5 * w.squaredNorm();
        const Eigen::MatrixXd gain = llt.solve(hp).transpose();
        x += gain * nu;
        p -= gain * hp;
        p = (0.5 * (p + p.transpose())).eval();
      }
    }
    x_filt[j] = x;
    p_filt[j] = p;
  }

  if (smoothed_eta) {
    smoothed_eta->resize(2, m);
    Eigen::VectorXd xs = x_filt[m - 1];
    smoothed_eta->col(m - 1) = xs.head<2>();
    for (int j = m - 2; j >= 0; --j) {
      Eigen::MatrixXd f = Eigen::MatrixXd::Identity(dim, dim);
      f.topLeftCorner(2, 2) = mean_map[j + 1];
      Eigen::MatrixXd pp = p_pred[j + 1];
      pp.diagonal().array() += 1e-12;
      const Eigen::MatrixXd gain =
          pp.ldlt().solve(f * p_filt[j]).transpose();
      xs = x_filt[j] + gain * (xs - x_pred[j + 1]);
      smoothed_eta->col(j) = xs.head<2>();
    }
  }
  return ll;
}

}  // namespace

Stage1Result stage1_longitudinal(const std::vector<SubjectRecord>& data,
                                 const ModelConfig& config,
                                 const Stage1Options& options) {
  Posterior post(data, config, LikelihoodParts::kLongitudinalOnly);
  const ParamLayout& l = post.layout();
  const int n_struct = l.z_start;

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(l.dim);
  x0(l.theta_start + 0) = 1.0;
  x0(l.theta_start + 1) = 0.5;
  x0(l.theta_start + 2) = 0.5;
  x0(l.theta_start + 3) = 1.0;
  x0(l.rho_start) = std::atanh(-0.5 / kRhoBound);
  x0(l.sigma_lambda_idx) = 0.0;

  // Moment-matched measurement scales: the latent factors have unit
  // stationary variance, so the within-subject spread of y_k sets the scale
  // of lambda_k plus noise, and the spread of subject means sets sigma_u.
  for (int k = 0; k < l.K; ++k) {
    double sw2 = 0.0, sb = 0.0, sb2 = 0.0;
    long nw = 0, nb = 0;
    for (const auto& s : data) {
      double mean = 0.0;
      long n = 0;
      for (Eigen::Index j = 0; j < s.y.cols(); ++j)
        if (std::isfinite(s.y(k, j))) {
          mean += s.y(k, j);
          ++n;
        }
      if (n == 0) continue;
      mean /= static_cast<double>(n);
      sb += mean;
      sb2 += mean * mean;
      ++nb;
      for (Eigen::Index j = 0; j < s.y.cols(); ++j)
        if (std::isfinite(s.y(k, j))) {
          const double d = s.y(k, j) - mean;
          sw2 += d * d;
          ++nw;
        }
    }
    const double var_w = nw > 1 ? sw2 / nw : 0.25;
    const double var_b =
        nb > 1 ? std::max(0.0, sb2 / nb - (sb / nb) * (sb / nb)) : 0.01;
    const double w_sd = std::sqrt(std::max(var_w, 1e-4));
    x0(l.lambda_start + k) = std::log(std::max(0.2, 0.9 * w_sd));
    x0(l.sigma_eps_start + k) = std::log(std::max(0.05, 0.45 * w_sd));
    x0(l.sigma_u_start + k) = std::log(std::max(0.05, std::sqrt(var_b)));
  }

  Stage1Result out;

  if (options.method == Stage1Options::Method::kMarginalMap) {
    std::vector<KalmanSubject> infos(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& grid = post.grid(static_cast<int>(i));
      infos[i].subject = &data[i];
      infos[i].times =
          Eigen::Map<const Eigen::VectorXd>(grid.points.data(), grid.size());
      infos[i].col_to_occ.assign(grid.size(), -1);
      for (Eigen::Index a = 0; a < data[i].meas_times.size(); ++a) {
        const auto it = std::find(grid.points.begin(), grid.points.end(),
                                  data[i].meas_times(a));
        infos[i].col_to_occ[it - grid.points.begin()] = static_cast<int>(a);
      }
    }

    Eigen::VectorXd full = x0;  // z block stays zero; log_prior ignores it
    auto objective = [&](const Eigen::VectorXd& r) {
      KalmanParams kp;
      kp.theta << r(0), r(1), r(2), r(3);
      const double v1 = kp.theta(0, 0) + kp.theta(1, 1);
      const double v2 = kp.theta(0, 0) * kp.theta(1, 1) -
                        kp.theta(0, 1) * kp.theta(1, 0);
      if (!(v1 > 0.0) || !(v2 > 0.0)) return 1e300;
      kp.rho = kRhoBound * std::tanh(r(l.rho_start));
      // (theta, rho) must describe a real OU process: the implied diffusion
      // theta V + V theta^T has to be positive definite, else the conditional
      // covariance goes negative at some gap.
      Eigen::Matrix2d vmat;
      vmat << 1.0, kp.rho, kp.rho, 1.0;
      const Eigen::Matrix2d diff = kp.theta * vmat + vmat * kp.theta.transpose();
      if (!(diff(0, 0) > 0.0) ||
          !(diff(0, 0) * diff(1, 1) - diff(0, 1) * diff(1, 0) > 0.0))
        return 1e300;
      kp.lambda = r.segment(l.lambda_start, l.K).array().exp();
      kp.sig_u2 = (2.0 * r.segment(l.sigma_u_start, l.K)).array().exp();
      kp.sig_eps2 = (2.0 * r.segment(l.sigma_eps_start, l.K)).array().exp();
      kp.factor_of = &config.factor_of;
      double ll = 0.0;
      for (const auto& info : infos) ll += kalman_subject(kp, info, nullptr);
      full.head(n_struct) = r;
      ll += post.log_prior(full);
      return std::isfinite(ll) ? -ll : 1e300;
    };
    auto f_grad = [&](const Eigen::VectorXd& r, Eigen::VectorXd& g) {
      const double f = objective(r);
      g.resize(r.size());
      Eigen::VectorXd rp = r;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(r(i)));
        rp(i) = r(i) + h;
        const double fp = objective(rp);
        rp(i) = r(i) - h;
        const double fm = objective(rp);
        rp(i) = r(i);
        g(i) = (fp - fm) / (2.0 * h);
      }
      return f;
    };

    const auto res = lbfgs_minimize(f_grad, x0.head(n_struct),
                                    options.max_iterations, options.grad_tol);
    out.objective = -res.f;
    out.converged = res.converged;
    out.iterations = res.iterations;

    // Smoothed latent paths at the optimum.
    KalmanParams kp;
    kp.theta << res.x(0), res.x(1), res.x(2), res.x(3);
    kp.rho = kRhoBound * std::tanh(res.x(l.rho_start));
    kp.lambda = res.x.segment(l.lambda_start, l.K).array().exp();
    kp.sig_u2 = (2.0 * res.x.segment(l.sigma_u_start, l.K)).array().exp();
    kp.sig_eps2 = (2.0 * res.x.segment(l.sigma_eps_start, l.K)).array().exp();
    kp.factor_of = &config.factor_of;
    for (const auto& info : infos) {
      Eigen::MatrixXd eta;
      kalman_subject(kp, info, &eta);
      out.latent.push_back(std::move(eta));
    }

    // Full-layout point: structural MAP plus whitened smoothed paths.
    out.point = Eigen::VectorXd::Zero(l.dim);
    out.point.head(n_struct) = res.x;
    const OUParams ou = post.ou_params(out.point);
    for (int i = 0; i < post.n_subjects(); ++i) {
      Eigen::Map<Eigen::MatrixXd>(out.point.data() + l.subject_z_start[i], l.p,
                                  l.subject_m[i]) =
          whiten(ou, infos[i].times, out.latent[i]);
    }
    return out;
  }

  // Short-chain variant: non-centered posterior, coordinate medians.  The
  // latent paths start on the data ridge (per-factor rescaled, subject-
  // centered outcome averages interpolated to filler columns).
  {
    const OUParams ou0 = post.ou_params(x0);
    for (int i = 0; i < post.n_subjects(); ++i) {
      const SubjectRecord& s = data[i];
      const auto& grid = post.grid(i);
      const int m = grid.size();
      Eigen::MatrixXd eta0 = Eigen::MatrixXd::Constant(
          l.p, m, std::numeric_limits<double>::quiet_NaN());
      Eigen::VectorXd ybar(l.K);
      for (int k = 0; k < l.K; ++k) {
        double acc = 0.0;
        long n = 0;
        for (Eigen::Index j = 0; j < s.y.cols(); ++j)
          if (std::isfinite(s.y(k, j))) {
            acc += s.y(k, j);
            ++n;
          }
        ybar(k) = n > 0 ? acc / n : 0.0;
      }
      for (Eigen::Index a = 0; a < s.meas_times.size(); ++a) {
        const auto it = std::find(grid.points.begin(), grid.points.end(),
                                  s.meas_times(a));
        const int col = static_cast<int>(it - grid.points.begin());
        for (int f = 0; f < l.p; ++f) {
          double acc = 0.0;
          long n = 0;
          for (int k = 0; k < l.K; ++k) {
            if (config.factor_of(k) != f || !std::isfinite(s.y(k, a))) continue;
            acc += (s.y(k, a) - ybar(k)) / std::exp(x0(l.lambda_start + k));
            ++n;
          }
          if (n > 0) eta0(f, col) = acc / n;
        }
      }
      for (int f = 0; f < l.p; ++f) {
        int prev = -1;
        for (int j = 0; j < m; ++j) {
          if (!std::isfinite(eta0(f, j))) continue;
          if (prev < 0)
            for (int b = 0; b < j; ++b) eta0(f, b) = eta0(f, j);
          else
            for (int b = prev + 1; b < j; ++b) {
              const double w = (grid.points[b] - grid.points[prev]) /
                               (grid.points[j] - grid.points[prev]);
              eta0(f, b) = (1.0 - w) * eta0(f, prev) + w * eta0(f, j);
            }
          prev = j;
        }
        if (prev < 0)
          eta0.row(f).setZero();
        else
          for (int b = prev + 1; b < m; ++b) eta0(f, b) = eta0(f, prev);
      }
      Eigen::VectorXd times =
          Eigen::Map<const Eigen::VectorXd>(grid.points.data(), m);
      Eigen::Map<Eigen::MatrixXd>(x0.data() + l.subject_z_start[i], l.p, m) =
          whiten(ou0, times, eta0);
    }
  }

  Target target;
  target.dim = l.dim;
  target.value = [&](const Eigen::VectorXd& x) { return post.log_posterior(x); };
  target.value_grad = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    return post.log_posterior_grad(x, g);
  };
  SamplerConfig sc;
  sc.chains = 1;
  sc.iterations = options.mcmc_iterations;
  sc.warmup = options.mcmc_warmup;
  sc.seed = options.mcmc_seed;
  sc.init = x0;
  const auto draws = sample(sc, target);
  const auto summary = summarize({draws.chains[0].draws}, {0.5});
  out.point = summary.median;
  out.objective = post.log_posterior(out.point);
  out.converged = true;
  out.iterations = options.mcmc_iterations;
  for (int i = 0; i < post.n_subjects(); ++i)
    out.latent.push_back(post.latent_path(out.point, i));
  return out;
}

Stage2Result stage2_hazard(const std::vector<SubjectRecord>& data,
                           const ModelConfig& config,
                           const std::vector<Eigen::MatrixXd>& latent_paths) {
  const int p = config.p;
  const int q = config.n_covariates;
  const int d = 1 + p + q;

  Stage2Result out;
  out.beta = Eigen::VectorXd::Zero(p);
  out.alpha = Eigen::VectorXd::Zero(q);

  int events = 0;
  for (const auto& s : data) events += s.event;
  if (events == 0 || events == static_cast<int>(data.size())) {
    // Separation: fall back to the prior medians (zero coefficients).
    out.separation_flagged = true;
    out.beta0 = 0.0;
    return out;
  }

  struct Cached {
    TimeGrid grid;
    Eigen::VectorXd w;
  };
  std::vector<Cached> cache;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Cached c;
    c.grid = build_grid(data[i].meas_times, data[i].event_time, config.grid_width);
    const int m = c.grid.size();
    if (latent_paths[i].cols() != m)
      throw DimensionError("stage2_hazard: latent path does not match the grid");
    c.w = Eigen::VectorXd::Zero(m);
    for (int j = 1; j < m; ++j) {
      const double dt = c.grid.points[j] - c.grid.points[j - 1];
      c.w(j - 1) += 0.5 * dt;
      c.w(j) += 0.5 * dt;
    }
    cache.push_back(std::move(c));
  }

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(d);  // (beta0, beta, alpha)
  double person_time = 0.0;
  for (const auto& s : data) person_time += s.event_time;
  coef(0) = std::log(static_cast<double>(events) / person_time);

  Eigen::VectorXd x(d), grad(d);
  Eigen::MatrixXd hess(d, d);
  for (out.iterations = 0; out.iterations < 100; ++out.iterations) {
    grad.setZero();
    hess.setZero();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& c = cache[i];
      const int m = c.grid.size();
      for (int j = 0; j < m; ++j) {
        x(0) = 1.0;
        x.segment(1, p) = latent_paths[i].col(j);
        if (q > 0) x.segment(1 + p, q) = data[i].covariates;
        const double h = std::exp(coef.dot(x));
        grad -= c.w(j) * h * x;
        hess -= c.w(j) * h * x * x.transpose();
        if (j == m - 1 && data[i].event) grad += x;
      }
    }
    out.grad_norm = grad.norm();
    if (out.grad_norm < 1e-8) break;
    // Tiny ridge keeps the solve stable when a covariate column is constant
    // or a latent channel is identically zero.
    hess.diagonal().array() -= 1e-9 * std::max(1.0, hess.cwiseAbs().maxCoeff());
    Eigen::VectorXd delta = (-hess).ldlt().solve(grad);
    if (!delta.allFinite()) {
      out.separation_flagged = true;
      break;
    }
    double step = 1.0;
    for (int ls = 0; ls < 30; ++ls) {
      const Eigen::VectorXd trial = coef + step * delta;
      if (trial.allFinite() && std::abs(trial(0)) < 500.0) break;
      step *= 0.5;
    }
    coef += step * delta;
  }

  out.beta0 = coef(0);
  out.beta = coef.segment(1, p);
  if (q > 0) out.alpha = coef.segment(1 + p, q);
  return out;
}

namespace {

Eigen::Matrix2d project_theta(Eigen::Matrix2d theta) {
  const auto ok = [](const Eigen::Matrix2d& t) {
    return t(0, 0) + t(1, 1) > 0.0 &&
           t(0, 0) * t(1, 1) - t(0, 1) * t(1, 0) > 0.0;
  };
  if (theta(0, 0) + theta(1, 1) <= 0.0) {
    theta << 1.0, 0.5, 0.5, 1.0;
    return theta;
  }
  for (int it = 0; it < 60 && !ok(theta); ++it) {
    theta(0, 1) *= 0.8;
    theta(1, 0) *= 0.8;
  }
  if (!ok(theta)) theta << 1.0, 0.5, 0.5, 1.0;
  return theta;
}

void fill_survival_block(const Posterior& joint, Eigen::VectorXd& pv,
                         double beta0, const Eigen::VectorXd& beta,
                         const Eigen::VectorXd& alpha) {
  const ParamLayout& l = joint.layout();
  switch (l.baseline) {
    case BaselineKind::kConstant:
      pv(l.surv_start) = beta0;
      break;
    case BaselineKind::kWeibull:
      // Shape 1 with the matching constant level: h0 = 1/scale.
      pv(l.surv_start) = 0.0;
      pv(l.surv_start + 1) = -beta0;
      break;
    case BaselineKind::kPiecewise:
      for (int b = 0; b < l.segments; ++b) pv(l.surv_start + b) = beta0;
      pv(l.surv_start + l.segments) = std::log(0.5);
      break;
  }
  pv.segment(l.beta_start, l.p) = beta;
  if (l.q > 0) pv.segment(l.alpha_start, l.q) = alpha;
}

}  // namespace

Eigen::VectorXd assemble_init(const Posterior& joint, const Stage1Result& s1,
                              const Stage2Result& s2) {
  const ParamLayout& l = joint.layout();
  Eigen::VectorXd pv = Eigen::VectorXd::Zero(l.dim);

  // Longitudinal blocks share the coordinate layout prefix.
  Eigen::Matrix2d theta;
  theta << s1.point(0), s1.point(1), s1.point(2), s1.point(3);
  theta = project_theta(theta);
  pv(l.theta_start + 0) = theta(0, 0);
  pv(l.theta_start + 1) = theta(0, 1);
  pv(l.theta_start + 2) = theta(1, 0);
  pv(l.theta_start + 3) = theta(1, 1);
  pv(l.rho_start) = s1.point(l.rho_start);
  pv.segment(l.lambda_start, l.K) = s1.point.segment(l.lambda_start, l.K);
  pv(l.sigma_lambda_idx) = s1.point(l.sigma_lambda_idx);
  pv.segment(l.sigma_u_start, l.K) = s1.point.segment(l.sigma_u_start, l.K);
  pv.segment(l.sigma_eps_start, l.K) = s1.point.segment(l.sigma_eps_start, l.K);

  fill_survival_block(joint, pv, s2.beta0, s2.beta, s2.alpha);

  // Innovations: whiten the stage-1 latent paths under the assembled OU law.
  const OUParams ou = joint.ou_params(pv);
  for (int i = 0; i < joint.n_subjects(); ++i) {
    const auto& grid = joint.grid(i);
    Eigen::VectorXd times =
        Eigen::Map<const Eigen::VectorXd>(grid.points.data(), grid.size());
    if (s1.latent[i].cols() != times.size())
      throw DimensionError("assemble_init: stage-1 latent grid mismatch");
    const Eigen::MatrixXd z = whiten(ou, times, s1.latent[i]);
    Eigen::Map<Eigen::MatrixXd>(pv.data() + l.subject_z_start[i], l.p,
                                l.subject_m[i]) = z;
  }

  if (std::isfinite(joint.log_posterior(pv))) return pv;
  Rng rng(20260809);
  for (int retry = 0; retry < 10; ++retry) {
    Eigen::VectorXd jittered = pv;
    for (int i = l.z_start; i < l.dim; ++i) jittered(i) += 0.1 * rng.normal();
    if (std::isfinite(joint.log_posterior(jittered))) return jittered;
  }
  throw SamplerError("assemble_init: joint posterior is not finite at the "
                     "assembled point after 10 jitter retries");
}

Eigen::VectorXd fixed_init(const Posterior& joint) {
  const ParamLayout& l = joint.layout();
  Eigen::VectorXd pv = Eigen::VectorXd::Zero(l.dim);
  pv(l.theta_start + 0) = 1.0;
  pv(l.theta_start + 1) = 0.5;
  pv(l.theta_start + 2) = 0.5;
  pv(l.theta_start + 3) = 1.0;
  pv(l.rho_start) = std::atanh(-0.5 / kRhoBound);
  for (int k = 0; k < l.K; ++k) {
    pv(l.lambda_start + k) = 0.0;        // loadings 1
    pv(l.sigma_u_start + k) = std::log(0.1);
    pv(l.sigma_eps_start + k) = std::log(0.1);
  }
  pv(l.sigma_lambda_idx) = 0.0;
  if (l.survival) {
    Eigen::VectorXd beta(l.p);
    beta << -1.0, 1.0;
    fill_survival_block(joint, pv, -1.0, beta, Eigen::VectorXd::Zero(l.q));
  }
  return pv;
}

}  // namespace oujm
