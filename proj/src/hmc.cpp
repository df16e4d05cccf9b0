#include "oujm/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "oujm/rng.hpp"

namespace oujm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kDivergenceEnergy = 1000.0;

struct Welford {
  Eigen::VectorXd mean, m2;
  long n = 0;

  void reset(int dim) {
    mean = Eigen::VectorXd::Zero(dim);
    m2 = Eigen::VectorXd::Zero(dim);
    n = 0;
  }
  void add(const Eigen::VectorXd& x) {
    ++n;
    const Eigen::VectorXd d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d.cwiseProduct(x - mean);
  }
  Eigen::VectorXd variance() const {
    return m2 / std::max<long>(1, n - 1);
  }
};

struct DualAverage {
  double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
  double gamma = 0.15, t0 = 10.0, kappa = 0.75, delta = 0.8;
  long m = 0;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    log_eps = std::log(eps);
    log_eps_bar = 0.0;
    h_bar = 0.0;
    m = 0;
  }
  void update(double accept) {
    ++m;
    const double w = 1.0 / (static_cast<double>(m) + t0);
    h_bar = (1.0 - w) * h_bar + w * (delta - accept);
    log_eps = mu - std::sqrt(static_cast<double>(m)) / gamma * h_bar;
    const double w2 = std::pow(static_cast<double>(m), -kappa);
    log_eps_bar = w2 * log_eps + (1.0 - w2) * log_eps_bar;
  }
  double current() const { return std::exp(log_eps); }
  double frozen() const { return std::exp(log_eps_bar); }
};

// Mass-adaptation window ends (doubling schedule between an initial
// fast-adaptation buffer and a terminal buffer).
std::vector<int> adaptation_windows(int warmup, int& init_buffer,
                                    int& term_buffer) {
  init_buffer = 75;
  term_buffer = std::max(50, warmup / 3);
  int base_window = 25;
  std::vector<int> ends;
  if (warmup < init_buffer + term_buffer + base_window) {
    init_buffer = static_cast<int>(0.15 * warmup);
    term_buffer = static_cast<int>(0.10 * warmup);
    base_window = warmup - init_buffer - term_buffer;
    if (base_window <= 0) return ends;  // warm-up too short: step size only
    ends.push_back(warmup - term_buffer);
    return ends;
  }
  int start = init_buffer;
  int width = base_window;
  const int last = warmup - term_buffer;
  while (start + width <= last) {
    int end = start + width;
    if (end + 2 * width > last) end = last;
    ends.push_back(end);
    start = end;
    width *= 2;
  }
  return ends;
}

struct LeapfrogResult {
  Eigen::VectorXd x, p, grad;
  double logp = kNegInf;
  bool ok = false;
};

// `inv_mass` is the diagonal of M^{-1}; kinetic energy is p' M^{-1} p / 2.
LeapfrogResult leapfrog(const Target& target, Eigen::VectorXd x,
                        Eigen::VectorXd p, Eigen::VectorXd grad, double logp,
                        double eps, int steps, const Eigen::VectorXd& inv_mass) {
  LeapfrogResult out;
  for (int s = 0; s < steps; ++s) {
    p += 0.5 * eps * grad;
    x += eps * inv_mass.cwiseProduct(p);
    logp = target.value_grad(x, grad);
    if (!std::isfinite(logp)) return out;  // ok = false
    p += 0.5 * eps * grad;
  }
  out.x = std::move(x);
  out.p = std::move(p);
  out.grad = std::move(grad);
  out.logp = logp;
  out.ok = true;
  return out;
}

double kinetic(const Eigen::VectorXd& p, const Eigen::VectorXd& inv_mass) {
  return 0.5 * p.cwiseProduct(p).dot(inv_mass);
}

double find_reasonable_epsilon(const Target& target, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& grad, double logp,
                               const Eigen::VectorXd& inv_mass, Rng& rng) {
  double eps = 1.0;
  Eigen::VectorXd p(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    p(i) = rng.normal() / std::sqrt(inv_mass(i));
  const double h0 = -logp + kinetic(p, inv_mass);
  auto attempt = [&](double e) {
    const auto r = leapfrog(target, x, p, grad, logp, e, 1, inv_mass);
    if (!r.ok) return kNegInf;
    return h0 - (-r.logp + kinetic(r.p, inv_mass));
  };
  double log_ratio = attempt(eps);
  const double dir = (log_ratio > std::log(0.5)) ? 1.0 : -1.0;
  for (int it = 0; it < 50; ++it) {
    eps *= std::pow(2.0, dir);
    log_ratio = attempt(eps);
    if (dir > 0 && !(log_ratio > std::log(0.5))) break;
    if (dir < 0 && !(log_ratio <= std::log(0.5))) break;
  }
  return std::min(std::max(eps, 1e-10), 1e6);
}

ChainRecord run_chain(const SamplerConfig& config, const Target& target,
                      std::uint64_t chain_stream,
                      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>&
                          record) {
  Rng rng(config.seed, chain_stream);
  const int dim = target.dim;
  const int keep = config.iterations - config.warmup;

  Eigen::VectorXd x = config.init;
  Eigen::VectorXd grad(dim);
  double logp = target.value_grad(x, grad);
  for (int r = 0; r < config.init_retries && !std::isfinite(logp); ++r) {
    for (int i = 0; i < dim; ++i)
      x(i) = config.init(i) + config.init_jitter * rng.normal();
    logp = target.value_grad(x, grad);
  }
  if (!std::isfinite(logp))
    throw SamplerError("initialization failed: log density is not finite at "
                       "the initial point after jitter retries");

  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(dim);
  double eps = find_reasonable_epsilon(target, x, grad, logp, inv_mass, rng);
  DualAverage da;
  da.delta = config.target_accept;
  da.restart(eps);

  int init_buffer = 0, term_buffer = 0;
  const std::vector<int> window_ends =
      adaptation_windows(config.warmup, init_buffer, term_buffer);
  std::size_t window_idx = 0;
  Welford welford;
  welford.reset(dim);

  ChainRecord rec;
  rec.draws.resize(keep, record ? record(x).size() : dim);
  rec.divergent.resize(keep, 0);
  rec.accept_stat.resize(keep, 0.0);
  rec.energy.resize(keep, 0.0);

  int consecutive_div = 0;
  Eigen::VectorXd p(dim);
  for (int it = 0; it < config.iterations; ++it) {
    const bool warm = it < config.warmup;
    for (int i = 0; i < dim; ++i)
      p(i) = rng.normal() / std::sqrt(inv_mass(i));
    const double h0 = -logp + kinetic(p, inv_mass);
    const int steps =
        1 + static_cast<int>(rng.uniform_int(
                static_cast<std::uint64_t>(config.max_leapfrog)));
    const auto prop = leapfrog(target, x, p, grad, logp, eps, steps, inv_mass);

    double accept = 0.0;
    bool divergent = false;
    double h1 = std::numeric_limits<double>::infinity();
    if (prop.ok) {
      h1 = -prop.logp + kinetic(prop.p, inv_mass);
      const double de = h0 - h1;
      if (!std::isfinite(h1) || -de > kDivergenceEnergy) {
        divergent = true;
      } else {
        accept = std::min(1.0, std::exp(de));
        if (rng.uniform() < accept) {
          x = prop.x;
          grad = prop.grad;
          logp = prop.logp;
        }
      }
    } else {
      divergent = true;
    }
    if (divergent) {
      ++rec.divergences_total;
      if (warm && ++consecutive_div >= 100)
        throw SamplerError(
            "initialization failure: 100 consecutive divergences during "
            "warm-up (step size " + std::to_string(eps) + ", log density " +
            std::to_string(logp) + ")");
    } else {
      consecutive_div = 0;
    }

    if (warm) {
      da.update(accept);
      eps = da.current();
      const bool in_window =
          it >= init_buffer && window_idx < window_ends.size();
      if (in_window) {
        welford.add(x);
        if (it + 1 == window_ends[window_idx]) {
          const double n = static_cast<double>(welford.n);
          const Eigen::VectorXd var = welford.variance();
          inv_mass = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
          welford.reset(dim);
          ++window_idx;
          eps = find_reasonable_epsilon(target, x, grad, logp, inv_mass, rng);
          da.restart(eps);
        }
      }
      if (it + 1 == config.warmup) {
        eps = da.frozen();
        rec.step_size_at_warmup_end = eps;
        rec.inv_mass_at_warmup_end = inv_mass;
      }
    } else {
      const int idx = it - config.warmup;
      rec.draws.row(idx) = record ? record(x).transpose() : x.transpose();
      rec.divergent[idx] = divergent ? 1 : 0;
      rec.accept_stat[idx] = accept;
      rec.energy[idx] = h0;
    }
  }
  if (config.warmup == 0) {
    rec.step_size_at_warmup_end = eps;
    rec.inv_mass_at_warmup_end = inv_mass;
  }
  rec.final_step_size = eps;
  rec.final_inv_mass = inv_mass;
  return rec;
}

}  // namespace

PosteriorDraws sample(const SamplerConfig& config, const Target& target,
                      const std::vector<std::string>& names,
                      const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>&
                          record,
                      bool parallel) {
  if (config.warmup >= config.iterations)
    throw DomainError("sampler: warmup must be smaller than iterations");
  if (config.init.size() != target.dim)
    throw DimensionError("sampler: init point dimension mismatch");
  if (!(config.target_accept > 0.0 && config.target_accept < 1.0))
    throw DomainError("sampler: target_accept must lie in (0, 1)");
  if (config.max_leapfrog < 1)
    throw DomainError("sampler: max_leapfrog must be positive");

  PosteriorDraws out;
  out.names = names;
  out.iterations = config.iterations;
  out.warmup = config.warmup;
  out.chains.resize(config.chains);

  if (parallel && config.chains > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(config.chains);
    for (int c = 0; c < config.chains; ++c)
      workers.emplace_back([&, c]() {
        try {
          out.chains[c] = run_chain(config, target, static_cast<std::uint64_t>(c),
                                    record);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (int c = 0; c < config.chains; ++c)
      out.chains[c] =
          run_chain(config, target, static_cast<std::uint64_t>(c), record);
  }
  return out;
}

std::vector<RhatEss> rhat_ess(const std::vector<Eigen::MatrixXd>& chains) {
  if (chains.empty() || chains[0].rows() < 4)
    throw DomainError("rhat_ess: need at least 4 draws per chain");
  const int dim = static_cast<int>(chains[0].cols());
  const int half = static_cast<int>(chains[0].rows()) / 2;

  // Split every chain in two.
  std::vector<Eigen::MatrixXd> splits;
  for (const auto& c : chains) {
    splits.push_back(c.topRows(half));
    splits.push_back(c.middleRows(half, half));
  }
  const int m = static_cast<int>(splits.size());
  const double n = static_cast<double>(half);

  std::vector<RhatEss> out(dim);
  for (int j = 0; j < dim; ++j) {
    Eigen::VectorXd means(m), vars(m);
    for (int s = 0; s < m; ++s) {
      const auto col = splits[s].col(j);
      means(s) = col.mean();
      vars(s) = (col.array() - means(s)).square().sum() / (n - 1.0);
    }
    const double w = vars.mean();
    const double grand = means.mean();
    const double b = n * (means.array() - grand).square().sum() /
                     std::max(1, m - 1);
    const double var_plus = (n - 1.0) / n * w + b / n;
    if (!(w > 0.0)) {
      out[j].rhat = std::numeric_limits<double>::quiet_NaN();
      out[j].ess = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out[j].rhat = std::sqrt(var_plus / w);

    // Combined autocorrelations; the sum is truncated at the first negative
    // paired term and the pairs are forced monotone nonincreasing.
    const int max_lag = half - 1;
    auto acov = [&](int s, int t) {
      const auto col = splits[s].col(j);
      double sum = 0.0;
      for (int i = 0; i + t < half; ++i)
        sum += (col(i) - means(s)) * (col(i + t) - means(s));
      return sum / n;
    };
    auto rho = [&](int t) {
      double mean_ct = 0.0;
      for (int s = 0; s < m; ++s) mean_ct += acov(s, t);
      mean_ct /= m;
      return 1.0 - (w - mean_ct) / var_plus;
    };
    double tau = 1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (int t = 1; t + 1 < max_lag; t += 2) {
      double pair = rho(t) + rho(t + 1);
      if (pair < 0.0) break;
      pair = std::min(pair, prev_pair);
      prev_pair = pair;
      tau += 2.0 * pair;
    }
    out[j].ess = static_cast<double>(m) * n / tau;
  }
  return out;
}

double quantile(std::vector<double> xs, double p) {
  if (xs.empty()) throw DomainError("quantile: empty sample");
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile: p must be in (0, 1)");
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= xs.size()) return xs.back();
  return xs[lo] + (h - std::floor(h)) * (xs[lo + 1] - xs[lo]);
}

Summary summarize(const std::vector<Eigen::MatrixXd>& chains,
                  const std::vector<double>& probs) {
  if (chains.empty() || chains[0].size() == 0)
    throw DomainError("summarize: empty draws");
  const int dim = static_cast<int>(chains[0].cols());
  Summary s;
  s.median.resize(dim);
  s.quantiles.resize(dim, static_cast<int>(probs.size()));
  std::vector<double> xs;
  for (int j = 0; j < dim; ++j) {
    xs.clear();
    for (const auto& c : chains)
      for (int i = 0; i < c.rows(); ++i) xs.push_back(c(i, j));
    s.median(j) = quantile(xs, 0.5);
    for (std::size_t q = 0; q < probs.size(); ++q)
      s.quantiles(j, static_cast<int>(q)) = quantile(xs, probs[q]);
  }
  return s;
}

}  // namespace oujm
