#include "bbnn/bbvi.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "bbnn/errors.hpp"
#include "bbnn/io.hpp"

namespace bbnn {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double normal_logpdf(double x, double m, double s) {
  const double z = (x - m) / s;
  return -0.5 * z * z - std::log(s) - kHalfLog2Pi;
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
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

// One draw: the score h and the bracket log p - log q.
struct Draw {
  Vector h;
  double bracket;
};

Draw draw_one(const DiagonalGaussian& q, const TargetDensity& target, RngStream& rng,
              std::size_t index) {
  const NoisySample s = diag_sample_with_noise(q, rng);
  const double lp = target.log_joint(s.x);
  if (!std::isfinite(lp))
    throw NumericError("score gradient: non-finite log_joint at draw " + std::to_string(index));
  return {score(q, s.x), lp - q.log_prob(s.x)};
}

}  // namespace

TargetDensity normal_target(double mean, double stddev) {
  TargetDensity t;
  t.name = "normal";
  t.dim = 1;
  t.log_joint = [=](std::span<const double> a) { return normal_logpdf(a[0], mean, stddev); };
  t.grad_log_joint = [=](std::span<const double> a) {
    return Vector{-(a[0] - mean) / (stddev * stddev)};
  };
  return t;
}

TargetDensity toy_target(const std::string& name) {
  if (name == "standard_normal") {
    auto t = normal_target(0.0, 1.0);
    t.name = name;
    return t;
  }
  if (name == "shifted_normal") {
    auto t = normal_target(3.0, 0.5);
    t.name = name;
    return t;
  }
  if (name == "bimodal") {
    TargetDensity t;
    t.name = name;
    t.dim = 1;
    t.log_joint = [](std::span<const double> a) {
      const double terms[2] = {std::log(0.5) + normal_logpdf(a[0], -2.0, 0.5),
                               std::log(0.5) + normal_logpdf(a[0], 2.0, 0.5)};
      return log_sum_exp(terms);
    };
    t.grad_log_joint = [](std::span<const double> a) {
      const double l0 = normal_logpdf(a[0], -2.0, 0.5);
      const double l1 = normal_logpdf(a[0], 2.0, 0.5);
      const double m = std::max(l0, l1);
      const double r0 = std::exp(l0 - m), r1 = std::exp(l1 - m);
      const double g = (r0 * (-(a[0] + 2.0) / 0.25) + r1 * (-(a[0] - 2.0) / 0.25)) / (r0 + r1);
      return Vector{g};
    };
    return t;
  }
  std::string names;
  for (const auto& n : toy_target_names()) names += (names.empty() ? "" : ", ") + n;
  throw ConfigError("unknown target '" + name + "' (available: " + names + ")");
}

std::vector<std::string> toy_target_names() { return {"standard_normal", "shifted_normal", "bimodal"}; }

Vector score(const DiagonalGaussian& q, std::span<const double> x) {
  const std::size_t d = q.dim();
  if (x.size() != d) throw std::invalid_argument("score: dimension mismatch");
  Vector h(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    const double s = q.stddev(i);
    const double z = x[i] - q.mean()[i];
    h[i] = z / (s * s);
    h[d + i] = (z * z / (s * s * s) - 1.0 / s) * sigmoid(q.rho()[i]);
  }
  return h;
}

GradientEstimate score_grad_naive(const DiagonalGaussian& q, const TargetDensity& target,
                                  std::size_t s, RngStream& rng) {
  if (s < 2) throw std::invalid_argument("score_grad_naive: need at least 2 draws");
  const std::size_t p = 2 * q.dim();
  std::vector<Moments> acc(p);
  Moments elbo;
  for (std::size_t j = 0; j < s; ++j) {
    const Draw dr = draw_one(q, target, rng, j);
    elbo.push(dr.bracket);
    for (std::size_t i = 0; i < p; ++i) acc[i].push(dr.h[i] * dr.bracket);
  }
  GradientEstimate out;
  out.grad.resize(p);
  out.per_param_variance.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    out.grad[i] = acc[i].mean;
    out.per_param_variance[i] = acc[i].variance();
  }
  out.n_samples = s;
  out.elbo = elbo.mean;
  out.elbo_std_error = std::sqrt(elbo.variance() / static_cast<double>(s));
  return out;
}

CvScale cv_scale(const Matrix& f_samples, const Matrix& h_samples) {
  if (f_samples.rows() != h_samples.rows() || f_samples.cols() != h_samples.cols())
    throw std::invalid_argument("cv_scale: shape mismatch");
  const std::size_t s = f_samples.rows();
  if (s < 2) throw std::invalid_argument("cv_scale: need at least 2 samples");
  double cov_sum = 0.0;
  double var_sum = 0.0;
  for (std::size_t d = 0; d < f_samples.cols(); ++d) {
    double fm = 0.0, hm = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      fm += f_samples(j, d);
      hm += h_samples(j, d);
    }
    fm /= static_cast<double>(s);
    hm /= static_cast<double>(s);
    double c = 0.0, v = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      const double dh = h_samples(j, d) - hm;
      c += (f_samples(j, d) - fm) * dh;
      v += dh * dh;
    }
    cov_sum += c / static_cast<double>(s - 1);
    var_sum += v / static_cast<double>(s - 1);
  }
  if (var_sum == 0.0) return {0.0};
  return {cov_sum / var_sum};
}

GradientEstimate score_grad_cv(const DiagonalGaussian& q, const TargetDensity& target,
                               std::size_t s, RngStream& rng) {
  if (s < 4) throw std::invalid_argument("score_grad_cv: need at least 4 draws");
  const std::size_t d = q.dim();
  const std::size_t p = 2 * d;
  const std::size_t n_scale = s / 2;
  const std::size_t n_est = s - n_scale;

  Matrix f_mu(n_scale, d), h_mu(n_scale, d), f_rho(n_scale, d), h_rho(n_scale, d);
  for (std::size_t j = 0; j < n_scale; ++j) {
    const Draw dr = draw_one(q, target, rng, j);
    for (std::size_t i = 0; i < d; ++i) {
      h_mu(j, i) = dr.h[i];
      f_mu(j, i) = dr.h[i] * dr.bracket;
      h_rho(j, i) = dr.h[d + i];
      f_rho(j, i) = dr.h[d + i] * dr.bracket;
    }
  }
  const double a_mu = cv_scale(f_mu, h_mu).a_star;
  const double a_rho = cv_scale(f_rho, h_rho).a_star;

  std::vector<Moments> acc(p);
  Moments elbo;
  for (std::size_t j = 0; j < n_est; ++j) {
    const Draw dr = draw_one(q, target, rng, n_scale + j);
    elbo.push(dr.bracket);
    for (std::size_t i = 0; i < p; ++i) {
      const double a = i < d ? a_mu : a_rho;
      acc[i].push(dr.h[i] * (dr.bracket - a));
    }
  }
  GradientEstimate out;
  out.grad.resize(p);
  out.per_param_variance.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    out.grad[i] = acc[i].mean;
    out.per_param_variance[i] = acc[i].variance();
  }
  out.n_samples = n_est;
  out.elbo = elbo.mean;
  out.elbo_std_error = std::sqrt(elbo.variance() / static_cast<double>(n_est));
  return out;
}

BbviResult run_bbvi(const TargetDensity& target, const DiagonalGaussian& q0,
                    const BbviConfig& cfg) {
  if (q0.dim() != target.dim) throw std::invalid_argument("run_bbvi: dimension mismatch");
  BbviResult res;
  res.q = q0;
  const std::size_t d = q0.dim();
  Vector accum(2 * d, 0.0);
  RngStream rng(cfg.seed, 0xB5B1ull);
  std::size_t quiet = 0;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const GradientEstimate g = cfg.control_variate ? score_grad_cv(res.q, target, cfg.samples, rng)
                                                   : score_grad_naive(res.q, target, cfg.samples, rng);
    if (!std::isfinite(g.elbo)) throw NumericError("run_bbvi: ELBO diverged at iteration " + std::to_string(it));
    res.trace.push_back({it, g.elbo, g.elbo_std_error});
    double max_step = 0.0;
    for (std::size_t i = 0; i < 2 * d; ++i) {
      accum[i] += g.grad[i] * g.grad[i];
      const double delta = cfg.step / (1e-8 + std::sqrt(accum[i])) * g.grad[i];
      if (!std::isfinite(delta))
        throw NumericError("run_bbvi: non-finite update at iteration " + std::to_string(it));
      if (i < d)
        res.q.mean()[i] += delta;
      else
        res.q.rho()[i - d] += delta;
      max_step = std::max(max_step, std::abs(delta));
    }
    res.iterations = it + 1;
    quiet = max_step < cfg.threshold ? quiet + 1 : 0;
    if (quiet >= cfg.patience) {
      res.converged = true;
      break;
    }
  }
  return res;
}

void write_elbo_trace_csv(std::ostream& os, std::span<const ElboPoint> trace) {
  os << "iteration,elbo_estimate,std_error\n";
  for (const auto& p : trace)
    os << p.iteration << ',' << format_double(p.elbo) << ',' << format_double(p.std_error) << '\n';
}

}  // namespace bbnn
