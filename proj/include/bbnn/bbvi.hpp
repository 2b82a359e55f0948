#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bbnn/distributions.hpp"
#include "bbnn/ndmath.hpp"

namespace bbnn {

/// Unnormalised log joint log p(b, a) over a latent vector a. The gradient is
/// optional; the score-function estimators never call it, the pathwise ones
/// (boosting, toy VI) require it.
struct TargetDensity {
  std::string name;
  std::size_t dim = 0;
  std::function<double(std::span<const double>)> log_joint;
  std::function<Vector(std::span<const double>)> grad_log_joint;
};

/// Built-in toy targets. `standard_normal`, `shifted_normal` (N(3, 0.5^2)) and
/// `bimodal` (equal mixture of N(-2, 0.5^2) and N(2, 0.5^2)); all 1-D and
/// normalised.
TargetDensity toy_target(const std::string& name);
std::vector<std::string> toy_target_names();
TargetDensity normal_target(double mean, double stddev);

/// Score-function gradient of the ELBO with respect to (mu, rho), laid out as
/// [mu_0..mu_{d-1}, rho_0..rho_{d-1}].
struct GradientEstimate {
  Vector grad;
  /// Sample variance (divisor n - 1) of the per-draw integrand.
  Vector per_param_variance;
  std::size_t n_samples = 0;
  /// MC estimate of the ELBO over the same draws, with its standard error.
  double elbo = 0.0;
  double elbo_std_error = 0.0;
};

struct CvScale {
  double a_star = 0.0;
};

/// d/d(mu, rho) log q(x), same layout as GradientEstimate::grad.
Vector score(const DiagonalGaussian& q, std::span<const double> x);

/// Plain Monte Carlo score-function estimator over s draws.
GradientEstimate score_grad_naive(const DiagonalGaussian& q, const TargetDensity& target,
                                  std::size_t s, RngStream& rng);

/// Pooled control-variate scale: sum_d Cov(f^d, h^d) / sum_d Var(h^d) over
/// one parameter group (columns of the s x d matrices). Falls back to 0 when
/// every column of h has zero sample variance.
CvScale cv_scale(const Matrix& f_samples, const Matrix& h_samples);

/// Control-variate estimator. The first floor(s/2) draws estimate a* per
/// parameter group (all mu's, all rho's); the remaining draws average
/// h * (log p - log q - a*), so a* is independent of the average it scales.
GradientEstimate score_grad_cv(const DiagonalGaussian& q, const TargetDensity& target,
                               std::size_t s, RngStream& rng);

struct BbviConfig {
  std::size_t samples = 64;
  std::size_t max_iters = 2000;
  double threshold = 1e-4;
  double step = 0.3;
  bool control_variate = true;
  std::uint64_t seed = 0;
  /// Consecutive sub-threshold updates required to stop.
  std::size_t patience = 5;
};

struct ElboPoint {
  std::size_t iteration = 0;
  double elbo = 0.0;
  double std_error = 0.0;
};

struct BbviResult {
  DiagonalGaussian q;
  std::vector<ElboPoint> trace;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Stochastic ascent on the ELBO with per-parameter adaptive steps
/// step / (1e-8 + sqrt(sum of squared gradients)).
BbviResult run_bbvi(const TargetDensity& target, const DiagonalGaussian& q0,
                    const BbviConfig& cfg);

/// CSV with header `iteration,elbo_estimate,std_error`.
void write_elbo_trace_csv(std::ostream& os, std::span<const ElboPoint> trace);

}  // namespace bbnn
