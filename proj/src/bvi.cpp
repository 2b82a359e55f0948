#include "bbnn/bvi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "bbnn/errors.hpp"
#include "bbnn/io.hpp"

namespace bbnn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Moments {
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  void push(double v) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
  }
  double std_error() const {
    return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
  }
};

}  // namespace

double fixed_schedule_lambda(std::size_t round) { return 2.0 / (static_cast<double>(round) + 2.0); }

double LambdaChoice::improvement_se() const { return std::sqrt(elbo_se * elbo_se + base_se * base_se); }

// ---------------------------------------------------------------------------
// Residual objective

ResidualEstimate residual_objective(const DiagonalGaussian& q_new, const GaussianMixture& mix,
                                    const TargetDensity& target, double delta,
                                    std::span<const Vector> eps, double lambda_bar) {
  if (eps.empty()) throw std::invalid_argument("residual_objective: need at least one sample");
  if (q_new.dim() != mix.dim() || q_new.dim() != target.dim)
    throw std::invalid_argument("residual_objective: dimension mismatch");
  if (!(lambda_bar >= 0.0 && lambda_bar <= 1.0))
    throw std::invalid_argument("residual_objective: lambda_bar outside [0, 1]");
  const std::size_t d = q_new.dim();
  const GaussianMixture qbar = mix.with_component(q_new, lambda_bar);
  const bool self = lambda_bar == 1.0;

  Vector sig(d), sd(d);
  for (std::size_t i = 0; i < d; ++i) {
    sig[i] = sigmoid(q_new.rho()[i]);
    sd[i] = q_new.stddev(i);
  }
  Moments value;
  std::vector<Moments> gm(d), gr(d);
  for (std::size_t j = 0; j < eps.size(); ++j) {
    const Vector w = q_new.transform(eps[j]);
    const double lp = target.log_joint(w);
    if (!std::isfinite(lp))
      throw NumericError("residual_objective: non-finite log_joint at draw " + std::to_string(j));
    value.push(lp - qbar.log_prob(w));
    Vector gw = target.grad_log_joint(w);
    if (!self) {
      const Vector a = q_new.grad_log_prob(w);
      const Vector b = qbar.grad_log_prob(w);
      for (std::size_t i = 0; i < d; ++i) gw[i] += a[i] - b[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
      gm[i].push(gw[i]);
      gr[i].push(gw[i] * eps[j][i] * sig[i]);
    }
  }
  ResidualEstimate out;
  out.value = value.mean + delta * q_new.entropy();
  out.std_error = value.std_error();
  out.grad_mu.resize(d);
  out.grad_rho.resize(d);
  out.se_mu.resize(d);
  out.se_rho.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    out.grad_mu[i] = gm[i].mean;
    out.grad_rho[i] = gr[i].mean + (1.0 + delta) * sig[i] / sd[i];
    out.se_mu[i] = gm[i].std_error();
    out.se_rho[i] = gr[i].std_error();
  }
  return out;
}

ResidualEstimate residual_objective(const DiagonalGaussian& q_new, const GaussianMixture& mix,
                                    const TargetDensity& target, double delta, std::size_t s,
                                    RngStream& rng, double lambda_bar) {
  std::vector<Vector> eps(s);
  for (auto& e : eps) e = sample_std_normal(rng, q_new.dim());
  return residual_objective(q_new, mix, target, delta, eps, lambda_bar);
}

// ---------------------------------------------------------------------------
// Component fitting on toy targets

FittedComponent fit_component_from(const GaussianMixture& mix, const TargetDensity& target,
                                   const ComponentFitConfig& cfg, double delta, double lambda_bar,
                                   DiagonalGaussian start, RngStream& rng) {
  const std::size_t d = start.dim();
  DiagonalGaussian q = std::move(start);
  Vector m(2 * d, 0.0), v(2 * d, 0.0);
  constexpr double b1 = 0.9, b2 = 0.999, eps_adam = 1e-8;
  double p1 = 1.0, p2 = 1.0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const ResidualEstimate r = residual_objective(q, mix, target, delta, cfg.samples, rng, lambda_bar);
    p1 *= b1;
    p2 *= b2;
    for (std::size_t i = 0; i < 2 * d; ++i) {
      const double g = i < d ? r.grad_mu[i] : r.grad_rho[i - d];
      if (!std::isfinite(g))
        throw NumericError("fit_new_component: non-finite gradient at iteration " + std::to_string(it));
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double step = cfg.learning_rate * (m[i] / (1 - p1)) / (std::sqrt(v[i] / (1 - p2)) + eps_adam);
      if (i < d)
        q.mean()[i] += step;
      else
        q.rho()[i - d] += step;
    }
  }
  FittedComponent out;
  out.objective = cfg.iterations == 0 ? 0.0
                                      : residual_objective(q, mix, target, delta, 512, rng, lambda_bar).value;
  out.q = std::move(q);
  return out;
}

FittedComponent fit_new_component(const GaussianMixture& mix, const TargetDensity& target,
                                  const ComponentFitConfig& cfg, double delta, double lambda_bar,
                                  RngStream& rng) {
  const std::size_t d = mix.dim();
  const Vector& mu0 = mix.components().front().mean();
  const std::size_t restarts = std::max<std::size_t>(1, cfg.restarts);
  std::vector<DiagonalGaussian> starts;
  for (std::size_t r = 0; r < restarts; ++r) {
    Vector mean(d);
    for (std::size_t i = 0; i < d; ++i) mean[i] = mu0[i] + cfg.init_spread * rng.normal();
    starts.push_back(DiagonalGaussian::with_stddev(std::move(mean), cfg.init_sigma));
  }
  if (cfg.iterations == 0) return {starts.front(), 0.0, 0};

  bool have = false;
  FittedComponent best;
  std::string last_error;
  for (std::size_t r = 0; r < restarts; ++r) {
    RngStream sub = rng.substream(r);
    try {
      FittedComponent f = fit_component_from(mix, target, cfg, delta, lambda_bar, starts[r], sub);
      if (!std::isfinite(f.objective)) continue;
      f.restart = r;
      if (!have || f.objective > best.objective) {
        best = std::move(f);
        have = true;
      }
    } catch (const NumericError& e) {
      last_error = e.what();
    }
  }
  if (!have) throw NumericError("fit_new_component: every restart diverged (" + last_error + ")");
  return best;
}

// ---------------------------------------------------------------------------
// Mixture weight selection

ElboPoint mixture_elbo(const GaussianMixture& mix, const LogJoint& log_joint, std::size_t s,
                       RngStream& rng) {
  Moments m;
  for (std::size_t j = 0; j < s; ++j) {
    const Vector x = mixture_sample(mix, rng);
    const double v = log_joint(x) - mix.log_prob(x);
    if (!std::isfinite(v)) throw NumericError("mixture_elbo: non-finite value at draw " + std::to_string(j));
    m.push(v);
  }
  return {0, m.mean, m.std_error()};
}

LambdaChoice select_lambda(const GaussianMixture& mix, const DiagonalGaussian& q_new,
                           const LogJoint& log_joint, LambdaRule rule, std::size_t round,
                           std::span<const double> grid, std::size_t s, RngStream& rng) {
  if (s < 2) throw std::invalid_argument("select_lambda: need at least 2 draws");
  std::vector<double> candidates;
  if (rule == LambdaRule::kFixedSchedule) {
    candidates.push_back(fixed_schedule_lambda(round));
  } else {
    for (double l : grid) {
      if (!(l > 0.0 && l <= 1.0)) throw ConfigError("lambda grid values must lie in (0, 1]");
      candidates.push_back(l);
    }
    candidates.push_back(fixed_schedule_lambda(round));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  }

  // Common draws: a_j from the current mixture and b_j from q_new share the
  // noise eps_j, so identical components give identical scores for every lambda.
  const std::size_t d = q_new.dim();
  std::vector<Vector> a(s), b(s);
  Vector la(s), lb(s), lqa(s), lqb(s), lna(s), lnb(s);
  for (std::size_t j = 0; j < s; ++j) {
    const double u = rng.uniform();
    const Vector eps = sample_std_normal(rng, d);
    std::size_t k = 0;
    double acc = mix.weights()[0];
    while (k + 1 < mix.size() && u > acc) acc += mix.weights()[++k];
    a[j] = mix.components()[k].transform(eps);
    b[j] = q_new.transform(eps);
    la[j] = log_joint(a[j]);
    lb[j] = log_joint(b[j]);
    if (!std::isfinite(la[j]) || !std::isfinite(lb[j]))
      throw NumericError("select_lambda: non-finite log_joint at draw " + std::to_string(j));
    lqa[j] = mix.log_prob(a[j]);
    lqb[j] = mix.log_prob(b[j]);
    lna[j] = q_new.log_prob(a[j]);
    lnb[j] = q_new.log_prob(b[j]);
  }
  auto log_mix = [](double lq, double ln, double lambda) {
    if (lambda >= 1.0) return ln;
    const double t[2] = {std::log1p(-lambda) + lq, std::log(lambda) + ln};
    return log_sum_exp(t);
  };

  LambdaChoice best;
  {
    Moments base;
    for (std::size_t j = 0; j < s; ++j) base.push(la[j] - lqa[j]);
    best.base_elbo = base.mean;
    best.base_se = base.std_error();
  }
  bool have = false;
  for (double lambda : candidates) {
    Moments m;
    for (std::size_t j = 0; j < s; ++j) {
      const double fa = la[j] - log_mix(lqa[j], lna[j], lambda);
      const double fb = lb[j] - log_mix(lqb[j], lnb[j], lambda);
      m.push((1.0 - lambda) * fa + lambda * fb);
    }
    // Differences below rounding level count as ties; candidates ascend, so
    // the smallest lambda keeps a tie.
    if (!have || m.mean > best.elbo + 1e-9 * (1.0 + std::abs(best.elbo))) {
      best.lambda = lambda;
      best.elbo = m.mean;
      best.elbo_se = m.std_error();
      have = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Toy boosting

BoostResult boost(const TargetDensity& target, std::size_t dim, const BoostConfig& cfg) {
  if (cfg.rounds < 1) throw ConfigError("boost: rounds must be >= 1");
  if (!(cfg.entropy_reg >= 0.0)) throw ConfigError("boost: entropy_reg must be >= 0");
  if (dim != target.dim) throw std::invalid_argument("boost: dimension mismatch");
  RngStream rng(cfg.seed, 0xB0057ull);
  BoostResult res;
  const DiagonalGaussian q_init = DiagonalGaussian::with_stddev(Vector(dim, cfg.init_mean), cfg.init_sigma);
  res.history.emplace_back(q_init);

  // Round 0: plain VI (the residual objective at lambda_bar = 1).
  auto t0 = Clock::now();
  {
    RngStream sub = rng.substream(0);
    FittedComponent f =
        fit_component_from(GaussianMixture(q_init), target, cfg.component, 0.0, 1.0, q_init, sub);
    res.mixture = GaussianMixture(f.q);
    const ElboPoint e = mixture_elbo(res.mixture, target.log_joint, cfg.elbo_samples, sub);
    res.trace.push_back({0, 0, 1.0, e.elbo, e.std_error, true, seconds_since(t0)});
    res.history.push_back(res.mixture);
  }

  for (std::size_t t = 1; t < cfg.rounds; ++t) {
    t0 = Clock::now();
    RngStream sub = rng.substream(t);
    const FittedComponent f = fit_new_component(res.mixture, target, cfg.component, cfg.entropy_reg,
                                                fixed_schedule_lambda(t), sub);
    const LambdaChoice c = select_lambda(res.mixture, f.q, target.log_joint, cfg.lambda_rule, t,
                                         cfg.grid, cfg.elbo_samples, sub);
    BoostRecord rec{t, res.mixture.size(), c.lambda, c.elbo, c.elbo_se, true, 0.0};
    if (c.improvement() < -cfg.reject_se * c.improvement_se()) {
      rec.accepted = false;
      rec.elbo = c.base_elbo;
      rec.elbo_se = c.base_se;
    } else {
      res.mixture = res.mixture.with_component(f.q, c.lambda);
    }
    rec.seconds = seconds_since(t0);
    res.trace.push_back(rec);
    res.history.push_back(res.mixture);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Networks

LogJoint network_log_joint(const MlpArchitecture& arch, const Dataset& data,
                           std::span<const std::size_t> rows, double beta) {
  if (!(beta > 0.0)) throw ConfigError("network_log_joint: beta must be positive");
  const Matrix x = data.features.select_rows(rows);
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.labels[rows[i]];
  return [arch, x, labels, beta](std::span<const double> w) {
    double ll = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i)
      ll += forward(arch, w, x.row(i))[static_cast<std::size_t>(labels[i])];
    double sq = 0.0;
    for (double v : w) sq += v * v;
    const double log_prior =
        -0.5 * sq - 0.5 * static_cast<double>(w.size()) * std::log(2.0 * std::numbers::pi);
    return ll / beta + log_prior;
  };
}

BbnnResult train_bbnn(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                      const BoostConfig& cfg) {
  if (cfg.rounds < 1) throw ConfigError("bbnn: rounds must be >= 1");
  const double beta = effective_beta(cfg.inner);
  const LogJoint lj = network_log_joint(arch, data, split.train, beta);
  RngStream rng(cfg.seed, 0xBB00ull);

  BbnnResult res;
  auto t0 = Clock::now();
  res.round0 = train_bbb(arch, data, split, cfg.inner);
  res.mixture = GaussianMixture(res.round0.posterior);
  res.component_traces.push_back(res.round0.trace);
  {
    RngStream sub = rng.substream(0);
    const ElboPoint e = mixture_elbo(res.mixture, lj, cfg.elbo_samples, sub);
    res.trace.push_back({0, 0, 1.0, e.elbo, e.std_error, true, seconds_since(t0)});
  }
  const Vector mu0 = res.round0.posterior.mean();
  const std::size_t d = mu0.size();

  for (std::size_t t = 1; t < cfg.rounds; ++t) {
    t0 = Clock::now();
    RngStream sub = rng.substream(t);
    Vector mean(d);
    for (std::size_t i = 0; i < d; ++i) mean[i] = mu0[i] + cfg.network_init_spread * sub.normal();
    DiagonalGaussian start = DiagonalGaussian::with_stddev(std::move(mean), cfg.inner.init_sigma);

    const double lambda_bar = fixed_schedule_lambda(t);
    const GaussianMixture current = res.mixture;
    const double delta = cfg.entropy_reg;
    // Residual part of the per-draw objective: beta (log q_new - log qbar),
    // qbar's density frozen, plus the optional delta entropy bonus through
    // log q_new.
    PathwiseTerm extra = [&current, lambda_bar, beta, delta](
                             const DiagonalGaussian& q, std::span<const double> w, Vector& gw) {
      const GaussianMixture qbar = current.with_component(q, lambda_bar);
      const Vector a = q.grad_log_prob(w);
      const Vector b = qbar.grad_log_prob(w);
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += beta * (a[i] - b[i]) - delta * a[i];
      return beta * (q.log_prob(w) - qbar.log_prob(w)) - delta * q.log_prob(w);
    };
    BbbConfig inner = cfg.inner;
    inner.seed = cfg.inner.seed + 1000003ull * t;
    // Early stopping watches the candidate mixture, not the lone component.
    ValPredictor val = [&](const DiagonalGaussian& q, const Matrix& xv, RngStream& r) {
      return mixture_predictive(current.with_component(q, lambda_bar), arch, xv, inner.val_samples, r,
                                inner.threads);
    };
    BbbResult fit = train_bbb_from(arch, data, split, inner, std::move(start), extra, val);
    res.component_traces.push_back(fit.trace);

    const LambdaChoice c = select_lambda(res.mixture, fit.posterior, lj, cfg.lambda_rule, t, cfg.grid,
                                         cfg.elbo_samples, sub);
    BoostRecord rec{t, res.mixture.size(), c.lambda, c.elbo, c.elbo_se, true, 0.0};
    if (c.improvement() < -cfg.reject_se * c.improvement_se()) {
      rec.accepted = false;
      rec.elbo = c.base_elbo;
      rec.elbo_se = c.base_se;
    } else {
      res.mixture = res.mixture.with_component(fit.posterior, c.lambda);
    }
    rec.seconds = seconds_since(t0);
    res.trace.push_back(rec);
  }
  return res;
}

PredictiveSamples mixture_predictive_samples(const GaussianMixture& posterior,
                                             const MlpArchitecture& arch, const Matrix& x,
                                             std::size_t s, RngStream& rng, int threads) {
  if (s < 1) throw std::invalid_argument("mixture_predictive: need at least one sample");
  const RngStream base = rng.substream(rng.next_u64());
  const std::size_t k_count = posterior.size();
  PredictiveSamples out;
  out.draws.resize(k_count * s);
  out.weights.resize(k_count * s);
  parallel_for(k_count * s, threads, [&](std::size_t idx) {
    const DiagonalGaussian& q = posterior.components()[idx / s];
    RngStream r = base.substream(idx);
    const Vector eps = sample_std_normal(r, q.dim());
    out.draws[idx] = predict_proba(arch, q.transform(eps), x);
  });
  for (std::size_t idx = 0; idx < k_count * s; ++idx)
    out.weights[idx] = posterior.weights()[idx / s] / static_cast<double>(s);
  out.mean = Matrix(x.rows(), arch.class_count());
  for (std::size_t idx = 0; idx < out.draws.size(); ++idx)
    for (std::size_t e = 0; e < out.mean.data().size(); ++e)
      out.mean.data()[e] += out.weights[idx] * out.draws[idx].data()[e];
  return out;
}

Matrix mixture_predictive(const GaussianMixture& posterior, const MlpArchitecture& arch,
                          const Matrix& x, std::size_t s, RngStream& rng, int threads) {
  return mixture_predictive_samples(posterior, arch, x, s, rng, threads).mean;
}

// ---------------------------------------------------------------------------
// Quadrature and dumps

double quadrature_kl(const std::function<double(double)>& log_q,
                     const std::function<double(double)>& log_p, double lo, double hi,
                     std::size_t points) {
  if (points < 2 || !(hi > lo)) throw std::invalid_argument("quadrature_kl: bad grid");
  const double h = (hi - lo) / static_cast<double>(points - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + h * static_cast<double>(i);
    const double lq = log_q(x);
    const double q = std::exp(lq);
    double f = 0.0;
    if (q > 0.0) f = q * (lq - log_p(x));
    total += (i == 0 || i + 1 == points) ? 0.5 * f : f;
  }
  return total * h;
}

double quadrature_kl(const GaussianMixture& q, const TargetDensity& target, double lo, double hi,
                     std::size_t points) {
  if (q.dim() != 1 || target.dim != 1) throw std::invalid_argument("quadrature_kl: 1-D only");
  return quadrature_kl([&](double x) { return q.log_prob(std::span<const double>(&x, 1)); },
                       [&](double x) { return target.log_joint(std::span<const double>(&x, 1)); },
                       lo, hi, points);
}

void write_boost_trace_csv(std::ostream& os, std::span<const BoostRecord> trace) {
  os << "round,lambda,elbo,elbo_se,accepted,seconds\n";
  for (const auto& r : trace)
    os << r.round << ',' << format_double(r.lambda) << ',' << format_double(r.elbo) << ','
       << format_double(r.elbo_se) << ',' << (r.accepted ? 1 : 0) << ',' << format_double(r.seconds)
       << '\n';
}

void write_density_csv(std::ostream& os, const GaussianMixture& q, const TargetDensity& target,
                       double lo, double hi, std::size_t points) {
  if (points < 2) throw std::invalid_argument("write_density_csv: need at least 2 points");
  os << "x,q,p\n";
  const double h = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + h * static_cast<double>(i);
    const std::span<const double> xs(&x, 1);
    os << format_double(x) << ',' << format_double(std::exp(q.log_prob(xs))) << ','
       << format_double(std::exp(target.log_joint(xs))) << '\n';
  }
}

}  // namespace bbnn
