#include "oujm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"
#include "oujm/smallmat.hpp"

namespace oujm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

TrueParams setting_params(int setting) {
  TrueParams p;
  p.theta.resize(2, 2);
  p.sigma = Eigen::MatrixXd::Zero(2, 2);
  p.factor_of = (Eigen::VectorXi(4) << 0, 0, 1, 1).finished();
  p.lambda = (Eigen::VectorXd(4) << 0.9, 0.5, 1.0, 0.8).finished();
  p.sigma_u = (Eigen::VectorXd(4) << 0.4, 0.5, 0.8, 1.0).finished();
  p.beta.resize(2);
  if (setting == 1) {
    p.theta << 1.8, 0.4, 1.5, 1.2;
    p.sigma(0, 0) = 1.76;
    p.sigma(1, 1) = 0.71;
    p.sigma_eps = (Eigen::VectorXd(4) << 0.2, 0.6, 0.3, 0.7).finished();
    p.beta0 = -2.5;
    p.beta << -0.2, 0.3;
  } else if (setting == 2) {
    p.theta << 2.4, 0.4, 0.8, 2.0;
    p.sigma(0, 0) = 2.14;
    p.sigma(1, 1) = 1.89;
    p.sigma_eps = (Eigen::VectorXd(4) << 0.2, 0.3, 0.1, 0.2).finished();
    p.beta0 = -3.0;
    p.beta << -0.4, 0.8;
  } else {
    throw DomainError("setting must be 1 or 2");
  }
  p.rho = (*to_correlation_param(p.theta, p.sigma).rho)(0);
  return p;
}

int default_max_draws(int setting, MeasPattern pattern) {
  switch (pattern) {
    case MeasPattern::kDense:
      return setting == 1 ? 60 : 70;
    case MeasPattern::kSparse:
      return setting == 1 ? 15 : 12;
    case MeasPattern::kCosine:
      // Calibrated so post-censoring occasion counts land on the reported
      // per-setting averages (29.3 and 20.4).
      return setting == 1 ? 93 : 58;
    case MeasPattern::kFile:
      return 0;
  }
  return 0;
}

Eigen::VectorXd draw_measurement_times(MeasPattern pattern,
                                       const SimConfig& config, int setting,
                                       Rng& rng,
                                       const std::vector<double>* file_times) {
  std::vector<double> times;
  times.push_back(0.0);

  if (pattern == MeasPattern::kFile) {
    if (!file_times)
      throw IoError("pattern 'file' requires per-subject timing data");
    for (double t : *file_times)
      if (t > 0.0 && t <= config.horizon) times.push_back(t);
  } else {
    const int n_grid = static_cast<int>(std::round(config.horizon / config.meas_grid_step));
    int m = config.max_draws > 0 ? config.max_draws
                                 : default_max_draws(setting, pattern);
    if (pattern == MeasPattern::kDense || pattern == MeasPattern::kSparse) {
      // Uniform without replacement from the candidate grid (partial
      // Fisher-Yates over grid indices 1..n_grid).
      std::vector<int> idx(n_grid);
      for (int i = 0; i < n_grid; ++i) idx[i] = i + 1;
      m = std::min(m, n_grid);
      for (int d = 0; d < m; ++d) {
        const int j = d + static_cast<int>(rng.uniform_int(n_grid - d));
        std::swap(idx[d], idx[j]);
        times.push_back(idx[d] * config.meas_grid_step);
      }
    } else {
      // Weighted without replacement: keep the m largest keys log(u)/w.
      std::vector<std::pair<double, double>> keyed;  // (key, time)
      keyed.reserve(n_grid);
      for (int i = 1; i <= n_grid; ++i) {
        const double t = i * config.meas_grid_step;
        double w = std::abs(std::cos(2.0 * M_PI * t / config.cosine_period));
        if (w < config.cosine_trunc) continue;
        double u;
        do {
          u = rng.uniform();
        } while (u <= 0.0);
        keyed.push_back({std::log(u) / w, t});
      }
      const int take = std::min<std::size_t>(m, keyed.size());
      std::partial_sort(keyed.begin(), keyed.begin() + take, keyed.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first; });
      for (int d = 0; d < take; ++d) times.push_back(keyed[d].second);
    }
  }

  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  return Eigen::Map<Eigen::VectorXd>(times.data(), times.size());
}

Eigen::MatrixXd simulate_latent(const OUParams& params, double fine_step,
                                double horizon, Rng& rng) {
  const OUConstraint c = constraints_ok(params.theta);
  if (!c.ok) throw ConstraintError("simulate_latent: theta is not mean-reverting");
  const int n_steps = static_cast<int>(std::round(horizon / fine_step));
  const Eigen::MatrixXd v = stationary_cov(params);
  const OUConditional cond = conditional(params, fine_step);
  const Eigen::MatrixXd lv = chol_lower(v);
  Eigen::MatrixXd lq = cond.cond_cov;
  lq.diagonal().array() += kCondCovJitter;
  lq = chol_lower(lq);

  Eigen::MatrixXd path(2, n_steps + 1);
  Eigen::Vector2d z;
  z << rng.normal(), rng.normal();
  path.col(0) = lv * z;
  for (int j = 1; j <= n_steps; ++j) {
    z << rng.normal(), rng.normal();
    path.col(j) = cond.mean_map * path.col(j - 1) + lq * z;
  }
  return path;
}

double simulate_event(double beta0, const Eigen::VectorXd& beta,
                      const Eigen::MatrixXd& latent_path, double fine_step,
                      Rng& rng) {
  const double threshold = rng.exponential(1.0);
  const int n = static_cast<int>(latent_path.cols());
  double cum = 0.0;
  double h_prev = std::exp(beta0 + beta.dot(latent_path.col(0)));
  for (int j = 1; j < n; ++j) {
    const double h = std::exp(beta0 + beta.dot(latent_path.col(j)));
    const double inc = 0.5 * (h_prev + h) * fine_step;
    if (cum + inc >= threshold) {
      const double frac = (threshold - cum) / inc;
      return (j - 1 + frac) * fine_step;
    }
    cum += inc;
    h_prev = h;
  }
  return kInf;
}

CensorOutcome apply_censoring(double raw_event_time, double censor_time,
                              double horizon) {
  CensorOutcome out;
  const double c = std::min(censor_time, horizon);
  if (raw_event_time <= c) {
    out.obs_time = raw_event_time;
    out.event = 1;
  } else {
    out.obs_time = c;
    out.event = 0;
  }
  return out;
}

namespace {

std::map<std::string, std::vector<double>> read_timing_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open timing file: " + path);
  std::map<std::string, std::vector<double>> out;
  std::string line;
  if (!std::getline(in, line)) throw IoError("timing file is empty: " + path);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError("timing file line " + std::to_string(lineno) +
                    ": expected id,time");
    const std::string id = line.substr(0, comma);
    char* end = nullptr;
    const double t = std::strtod(line.c_str() + comma + 1, &end);
    if (end == line.c_str() + comma + 1)
      throw IoError("timing file line " + std::to_string(lineno) +
                    ": unparseable time");
    out[id].push_back(t);
  }
  for (auto& [id, ts] : out) std::sort(ts.begin(), ts.end());
  return out;
}

}  // namespace

SimResult simulate_dataset(const SimConfig& config) {
  if (config.n_subjects < 1) throw DomainError("need at least one subject");
  if (!(config.horizon > 0.0)) throw DomainError("horizon must be positive");

  SimResult out;
  out.config = config;
  out.params = setting_params(config.setting);
  const TrueParams& tp = out.params;
  const OUParams ou = make_volatility_params(tp.theta, tp.sigma);
  const int K = static_cast<int>(tp.lambda.size());

  // Pattern 'file': donors are bootstrapped per subject.
  std::map<std::string, std::vector<double>> timing;
  std::vector<const std::vector<double>*> donors;
  if (config.pattern == MeasPattern::kFile) {
    timing = read_timing_file(config.timing_file);
    if (timing.empty()) throw IoError("timing file has no subjects");
    for (const auto& [id, ts] : timing) donors.push_back(&ts);
  }

  const int n_fine = static_cast<int>(std::round(config.horizon / config.fine_step));

  for (int i = 0; i < config.n_subjects; ++i) {
    Rng rng_meas = subject_rng(config.seed, i, kStreamMeasTimes);
    Rng rng_latent = subject_rng(config.seed, i, kStreamLatent);
    Rng rng_event = subject_rng(config.seed, i, kStreamEvent);
    Rng rng_censor = subject_rng(config.seed, i, kStreamCensor);
    Rng rng_u = subject_rng(config.seed, i, kStreamIntercept);
    Rng rng_eps = subject_rng(config.seed, i, kStreamNoise);

    const std::vector<double>* donor = nullptr;
    if (config.pattern == MeasPattern::kFile)
      donor = donors[rng_meas.uniform_int(donors.size())];
    const Eigen::VectorXd meas_all =
        draw_measurement_times(config.pattern, config, config.setting, rng_meas,
                               donor);

    const Eigen::MatrixXd path =
        simulate_latent(ou, config.fine_step, config.horizon, rng_latent);
    const double raw_event =
        simulate_event(tp.beta0, tp.beta, path, config.fine_step, rng_event);

    double censor;
    if (config.pattern == MeasPattern::kFile) {
      censor = (donor->empty() || donor->back() <= 0.0) ? config.horizon
                                                        : donor->back();
    } else {
      censor = config.censor_scale * rng_censor.exponential(config.censor_rate);
    }
    const CensorOutcome obs = apply_censoring(raw_event, censor, config.horizon);

    SubjectRecord rec;
    rec.id = "s" + std::to_string(i + 1);
    std::vector<double> kept;
    for (Eigen::Index a = 0; a < meas_all.size(); ++a)
      if (meas_all(a) <= obs.obs_time) kept.push_back(meas_all(a));
    rec.meas_times = Eigen::Map<Eigen::VectorXd>(kept.data(), kept.size());
    rec.event_time = obs.obs_time;
    rec.event = obs.event;
    rec.covariates = Eigen::VectorXd::Zero(0);

    const int n = static_cast<int>(kept.size());
    Eigen::VectorXd u(K);
    for (int k = 0; k < K; ++k) u(k) = tp.sigma_u(k) * rng_u.normal();
    rec.y.resize(K, n);
    for (int j = 0; j < n; ++j) {
      const int fine_idx = std::min(
          n_fine, static_cast<int>(std::round(kept[j] / config.fine_step)));
      for (int k = 0; k < K; ++k)
        rec.y(k, j) = tp.lambda(k) * path(tp.factor_of(k), fine_idx) + u(k) +
                      tp.sigma_eps(k) * rng_eps.normal();
    }

    TruthRecord truth;
    truth.raw_event_time = raw_event;
    truth.censor_time = censor;
    const int last_idx = std::min<int>(
        static_cast<int>(path.cols()) - 1,
        static_cast<int>(std::floor(obs.obs_time / config.fine_step)));
    truth.path_times.resize(last_idx + 1);
    for (int j = 0; j <= last_idx; ++j) truth.path_times(j) = j * config.fine_step;
    truth.path = path.leftCols(last_idx + 1);

    out.subjects.push_back(std::move(rec));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

void emit_dataset(const SimConfig& config, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const SimResult sim = simulate_dataset(config);
  fs::create_directories(out_dir);

  {
    std::ofstream f(fs::path(out_dir) / "long.csv");
    if (!f) throw IoError("cannot write long.csv under " + out_dir);
    f << "id,time,item,value\n";
    for (const auto& s : sim.subjects)
      for (Eigen::Index j = 0; j < s.meas_times.size(); ++j)
        for (int k = 0; k < s.y.rows(); ++k)
          f << s.id << ',' << g17(s.meas_times(j)) << ",y" << (k + 1) << ','
            << g17(s.y(k, j)) << '\n';
  }
  {
    std::ofstream f(fs::path(out_dir) / "surv.csv");
    if (!f) throw IoError("cannot write surv.csv under " + out_dir);
    f << "id,time,event\n";
    for (const auto& s : sim.subjects)
      f << s.id << ',' << g17(s.event_time) << ',' << s.event << '\n';
  }
  {
    std::ofstream f(fs::path(out_dir) / "truth.csv");
    if (!f) throw IoError("cannot write truth.csv under " + out_dir);
    f << "record,id,time,name,value\n";
    const TrueParams& tp = sim.params;
    auto param = [&](const std::string& name, double value) {
      f << "param,,," << name << ',' << g17(value) << '\n';
    };
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        param("theta[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]",
              tp.theta(i, j));
    param("rho", tp.rho);
    for (int k = 0; k < tp.lambda.size(); ++k)
      param("lambda[" + std::to_string(k + 1) + "]", tp.lambda(k));
    for (int k = 0; k < tp.sigma_u.size(); ++k)
      param("sigma_u[" + std::to_string(k + 1) + "]", tp.sigma_u(k));
    for (int k = 0; k < tp.sigma_eps.size(); ++k)
      param("sigma_eps[" + std::to_string(k + 1) + "]", tp.sigma_eps(k));
    param("beta0", tp.beta0);
    for (int j = 0; j < tp.beta.size(); ++j)
      param("beta[" + std::to_string(j + 1) + "]", tp.beta(j));

    for (std::size_t i = 0; i < sim.subjects.size(); ++i) {
      const auto& id = sim.subjects[i].id;
      f << "event," << id << ",,raw_event_time,"
        << g17(sim.truth[i].raw_event_time) << '\n';
      f << "event," << id << ",,censor_time," << g17(sim.truth[i].censor_time)
        << '\n';
      for (Eigen::Index j = 0; j < sim.truth[i].path_times.size(); ++j) {
        f << "path," << id << ',' << g17(sim.truth[i].path_times(j))
          << ",eta[1]," << g17(sim.truth[i].path(0, j)) << '\n';
        f << "path," << id << ',' << g17(sim.truth[i].path_times(j))
          << ",eta[2]," << g17(sim.truth[i].path(1, j)) << '\n';
      }
    }
  }
  {
    nlohmann::json j;
    j["setting"] = config.setting;
    switch (config.pattern) {
      case MeasPattern::kDense: j["pattern"] = "1"; break;
      case MeasPattern::kSparse: j["pattern"] = "2"; break;
      case MeasPattern::kCosine: j["pattern"] = "4"; break;
      case MeasPattern::kFile: j["pattern"] = "file"; break;
    }
    j["n"] = config.n_subjects;
    j["horizon"] = config.horizon;
    j["seed"] = config.seed;
    j["max_draws"] = config.max_draws > 0
                         ? config.max_draws
                         : default_max_draws(config.setting, config.pattern);
    j["cosine_period"] = config.cosine_period;
    j["cosine_trunc"] = config.cosine_trunc;
    j["fine_step"] = config.fine_step;
    j["meas_grid_step"] = config.meas_grid_step;
    j["censor_rate"] = config.censor_rate;
    j["censor_scale"] = config.censor_scale;
    if (!config.timing_file.empty()) j["timing_file"] = config.timing_file;
    std::ofstream f(fs::path(out_dir) / "simconfig.json");
    if (!f) throw IoError("cannot write simconfig.json under " + out_dir);
    f << j.dump(2) << '\n';
  }
}

}  // namespace oujm
