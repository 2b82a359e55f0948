#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bbnn/bbb.hpp"
#include "bbnn/bbvi.hpp"
#include "bbnn/distributions.hpp"

namespace bbnn {

enum class LambdaRule { kFixedSchedule, kLineSearch };

/// Settings for fitting one component against a toy target.
struct ComponentFitConfig {
  std::size_t iterations = 600;
  std::size_t samples = 16;
  double learning_rate = 0.05;  // Adam
  std::size_t restarts = 6;
  /// Starting means are drawn from N(mu_0, init_spread^2) per coordinate,
  /// mu_0 being the round-0 component's mean.
  double init_spread = 3.0;
  double init_sigma = 0.05;
};

struct BoostConfig {
  /// Component-fitting rounds. Round 0 is plain VI; later rounds boost.
  std::size_t rounds = 3;
  LambdaRule lambda_rule = LambdaRule::kLineSearch;
  std::vector<double> grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  /// Extra entropy weight delta on the new component.
  double entropy_reg = 0.0;
  std::size_t elbo_samples = 256;
  /// Rounds whose ELBO change is below -reject_se standard errors are dropped.
  double reject_se = 3.0;
  std::uint64_t seed = 0;

  // Toy targets: initial density for round 0 and per-component fitting.
  double init_mean = 0.5;
  double init_sigma = 1.0;
  ComponentFitConfig component;

  // Networks: round 0 and every later component use these trainer settings.
  BbbConfig inner;
  double network_init_spread = 0.5;
};

/// 2 / (t + 2) for round t (0-based).
double fixed_schedule_lambda(std::size_t round);

struct ResidualEstimate {
  double value = 0.0;
  double std_error = 0.0;
  Vector grad_mu;
  Vector grad_rho;
  /// Standard errors of the gradient coordinates.
  Vector se_mu;
  Vector se_rho;
};

/// Residual objective for a candidate component,
///   J = E_{q_new}[log p(W) - log qbar(W)] + delta * H[q_new],
/// with qbar = (1 - lambda_bar) * mix + lambda_bar * q_new. lambda_bar = 0
/// scores q_new against the current mixture alone. The returned gradient
/// differentiates through W = mu + sigma * eps with qbar's density held
/// fixed, which is the mixture-ELBO gradient divided by lambda_bar; the
/// q_new entropy part uses its closed form.
ResidualEstimate residual_objective(const DiagonalGaussian& q_new, const GaussianMixture& mix,
                                    const TargetDensity& target, double delta, std::size_t s,
                                    RngStream& rng, double lambda_bar = 0.0);
ResidualEstimate residual_objective(const DiagonalGaussian& q_new, const GaussianMixture& mix,
                                    const TargetDensity& target, double delta,
                                    std::span<const Vector> eps, double lambda_bar = 0.0);

struct FittedComponent {
  DiagonalGaussian q;
  double objective = 0.0;  // final J estimate of the chosen restart
  std::size_t restart = 0;
};

/// Adam ascent on the residual objective from `cfg.restarts` randomised
/// starts around mix component 0's mean; the restart with the highest final
/// J is kept. Throws NumericError when every restart diverges.
FittedComponent fit_new_component(const GaussianMixture& mix, const TargetDensity& target,
                                  const ComponentFitConfig& cfg, double delta, double lambda_bar,
                                  RngStream& rng);

/// Ascent from one given start.
FittedComponent fit_component_from(const GaussianMixture& mix, const TargetDensity& target,
                                   const ComponentFitConfig& cfg, double delta, double lambda_bar,
                                   DiagonalGaussian start, RngStream& rng);

struct LambdaChoice {
  double lambda = 1.0;
  double elbo = 0.0;     // MC mixture ELBO of the updated mixture
  double elbo_se = 0.0;
  double base_elbo = 0.0;  // current mixture on the same draws
  double base_se = 0.0;
  double improvement() const { return elbo - base_elbo; }
  double improvement_se() const;
};

/// Scores a draw set under the unnormalised log joint.
using LogJoint = std::function<double(std::span<const double>)>;

/// fixed_schedule returns 2/(t+2); line_search evaluates grid ∪ {2/(t+2)} on
/// common draws (s from the mixture, s from q_new) and returns the best, the
/// smallest lambda winning ties.
LambdaChoice select_lambda(const GaussianMixture& mix, const DiagonalGaussian& q_new,
                           const LogJoint& log_joint, LambdaRule rule, std::size_t round,
                           std::span<const double> grid, std::size_t s, RngStream& rng);

/// MC ELBO of a mixture, E_q[log p - log q], with its standard error.
ElboPoint mixture_elbo(const GaussianMixture& mix, const LogJoint& log_joint, std::size_t s,
                       RngStream& rng);

struct BoostRecord {
  std::size_t round = 0;
  std::size_t component_index = 0;  // index the component has (or would have had)
  double lambda = 1.0;
  double elbo = 0.0;
  double elbo_se = 0.0;
  bool accepted = true;
  double seconds = 0.0;
};

struct BoostResult {
  GaussianMixture mixture;
  std::vector<BoostRecord> trace;
  /// history[0] is the initial density, history[t + 1] the mixture after round t.
  std::vector<GaussianMixture> history;
};

BoostResult boost(const TargetDensity& target, std::size_t dim, const BoostConfig& cfg);

struct BbnnResult {
  GaussianMixture mixture;
  std::vector<BoostRecord> trace;
  BbbResult round0;
  std::vector<std::vector<EpochRecord>> component_traces;
};

/// Boosting over network weights. Round 0 is exactly train_bbb with
/// cfg.inner; later components train on minibatches with the residual term
/// added, and lambda is chosen on the full training set.
BbnnResult train_bbnn(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                      const BoostConfig& cfg);

/// Log joint of the given rows: log-likelihood / beta + log prior.
LogJoint network_log_joint(const MlpArchitecture& arch, const Dataset& data,
                           std::span<const std::size_t> rows, double beta);

/// Stratified predictive: s draws from every component, each weighted
/// w_k / s. Per-draw matrices are kept for the uncertainty decomposition.
PredictiveSamples mixture_predictive_samples(const GaussianMixture& posterior,
                                             const MlpArchitecture& arch, const Matrix& x,
                                             std::size_t s, RngStream& rng, int threads = 1);
Matrix mixture_predictive(const GaussianMixture& posterior, const MlpArchitecture& arch,
                          const Matrix& x, std::size_t s, RngStream& rng, int threads = 1);

/// Trapezoid KL(q || p) for 1-D densities on [lo, hi].
double quadrature_kl(const std::function<double(double)>& log_q,
                     const std::function<double(double)>& log_p, double lo = -10.0,
                     double hi = 10.0, std::size_t points = 4001);
double quadrature_kl(const GaussianMixture& q, const TargetDensity& target, double lo = -10.0,
                     double hi = 10.0, std::size_t points = 4001);

/// CSV `round,lambda,elbo,elbo_se,accepted,seconds`.
void write_boost_trace_csv(std::ostream& os, std::span<const BoostRecord> trace);
/// CSV `x,q,p` of the 1-D mixture and target densities on a uniform grid.
void write_density_csv(std::ostream& os, const GaussianMixture& q, const TargetDensity& target,
                       double lo = -6.0, double hi = 6.0, std::size_t points = 601);

}  // namespace bbnn
